#ifndef HAPO_HAPO_HPP_
#define HAPO_HAPO_HPP_

#include "hapo/advantage.hpp"
#include "hapo/analysis.hpp"
#include "hapo/common.hpp"
#include "hapo/config.hpp"
#include "hapo/entropy_stats.hpp"
#include "hapo/env.hpp"
#include "hapo/loss.hpp"
#include "hapo/objective.hpp"
#include "hapo/policy.hpp"
#include "hapo/run.hpp"
#include "hapo/sampler.hpp"
#include "hapo/trainer.hpp"

#endif  // HAPO_HAPO_HPP_
