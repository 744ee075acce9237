#ifndef HAPO_ENV_HPP_
#define HAPO_ENV_HPP_

// Synthetic verifiable-reward tasks.
//
// Token layout shared by every task:
//   0        connector
//   1        end of sequence
//   2        separator / prompt marker
//   3..12    digits 0..9
//   13..     distractors (never part of a winning response)
//
// branching-sum (target V, L choices):
//   prompt   = [SEP, digit(L), digit(V)]
//   response = d0 C d1 C ... C d_{L-1} EOS      (length 2L)
//   reward 1 iff the digits sum to V modulo 10.
//
// copy-parity (bit string b of length n):
//   prompt   = [SEP, b..., SEP]
//   response = b... parity(b) EOS               (length n + 2)

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hapo/common.hpp"

namespace hapo::env {

inline constexpr TokenId kConnector = 0;
inline constexpr TokenId kEos = 1;
inline constexpr TokenId kSeparator = 2;
inline constexpr TokenId kDigitBase = 3;
inline constexpr int kMinBranchingVocab = kDigitBase + 10;
inline constexpr int kMinCopyVocab = kDigitBase + 2;

constexpr TokenId digit_token(int digit) noexcept { return kDigitBase + digit; }

constexpr std::optional<int> token_digit(TokenId token) noexcept {
  if (token >= kDigitBase && token < kDigitBase + 10) return token - kDigitBase;
  return std::nullopt;
}

enum class TaskKind { kBranchingSum, kCopyParity };

inline std::string to_string(TaskKind kind) {
  return kind == TaskKind::kBranchingSum ? "branching-sum" : "copy-parity";
}

inline TaskKind task_kind_from_string(const std::string& name) {
  if (name == "branching-sum") return TaskKind::kBranchingSum;
  if (name == "copy-parity") return TaskKind::kCopyParity;
  throw ConfigError("unknown task kind '" + name + "'");
}

struct TaskSpec {
  TaskKind kind = TaskKind::kBranchingSum;
  int vocab_size = 16;
  int max_len = 10;
  // branching-sum: residue V in [0, 9]; drawn from the prompt seed when empty.
  std::optional<int> target;
  // branching-sum: number of digit choices L in [1, 9].
  int choices = 4;
  // copy-parity: explicit '0'/'1' string; drawn from the prompt seed when empty.
  std::optional<std::string> bits;
  int bit_count = 4;
  // Restrict sampling to grammar-legal tokens: digits (bits) at free
  // positions, the connector and EOS where the format forces them.
  bool guided = true;

  bool operator==(const TaskSpec&) const = default;
};

// Length of every reward-1 response for a resolved spec.
inline int winning_length(const TaskSpec& spec) {
  if (spec.kind == TaskKind::kBranchingSum) return 2 * spec.choices;
  const int n = spec.bits ? static_cast<int>(spec.bits->size()) : spec.bit_count;
  return n + 2;
}

inline void validate(const TaskSpec& spec) {
  if (spec.vocab_size < 4) {
    throw ConfigError("vocab_size must be >= 4, got " + std::to_string(spec.vocab_size));
  }
  if (spec.max_len < 2) {
    throw ConfigError("max_len must be >= 2, got " + std::to_string(spec.max_len));
  }
  if (spec.kind == TaskKind::kBranchingSum) {
    if (spec.vocab_size < kMinBranchingVocab) {
      throw ConfigError("branching-sum needs vocab_size >= " +
                        std::to_string(kMinBranchingVocab) + " to hold all digits");
    }
    if (spec.choices < 1 || spec.choices > 9) {
      throw ConfigError("branching-sum choices must be in [1, 9]");
    }
    if (spec.target && (*spec.target < 0 || *spec.target > 9)) {
      throw ConfigError("branching-sum target must be in [0, 9]");
    }
  } else {
    if (spec.vocab_size < kMinCopyVocab) {
      throw ConfigError("copy-parity needs vocab_size >= " + std::to_string(kMinCopyVocab));
    }
    if (spec.bits) {
      if (spec.bits->empty()) throw ConfigError("copy-parity bits must be nonempty");
      for (char c : *spec.bits) {
        if (c != '0' && c != '1') throw ConfigError("copy-parity bits must be '0'/'1'");
      }
    } else if (spec.bit_count < 1 || spec.bit_count > 16) {
      throw ConfigError("copy-parity bit_count must be in [1, 16]");
    }
  }
  if (winning_length(spec) > spec.max_len) {
    throw ConfigError("max_len " + std::to_string(spec.max_len) +
                      " is shorter than the winning response length " +
                      std::to_string(winning_length(spec)));
  }
}

struct Prompt {
  TaskSpec task;  // fully resolved: target / bits always set
  std::vector<TokenId> tokens;
  std::uint64_t id = 0;
};

inline Prompt make_prompt(const TaskSpec& spec, std::uint64_t seed) {
  validate(spec);
  Prompt prompt;
  prompt.task = spec;
  prompt.id = seed;
  std::mt19937_64 rng(derive_seed(seed, {0x70726f6d7074ULL}));
  if (spec.kind == TaskKind::kBranchingSum) {
    if (!prompt.task.target) {
      prompt.task.target = static_cast<int>(rng() % 10);
    }
    prompt.tokens = {kSeparator, digit_token(spec.choices), digit_token(*prompt.task.target)};
  } else {
    if (!prompt.task.bits) {
      std::string bits;
      for (int i = 0; i < spec.bit_count; ++i) bits.push_back((rng() & 1U) ? '1' : '0');
      prompt.task.bits = bits;
    }
    prompt.task.bit_count = static_cast<int>(prompt.task.bits->size());
    prompt.tokens.push_back(kSeparator);
    for (char c : *prompt.task.bits) prompt.tokens.push_back(digit_token(c - '0'));
    prompt.tokens.push_back(kSeparator);
  }
  return prompt;
}

// Pure verifier. Malformed or overlong responses score 0.
inline int score(const Prompt& prompt, std::span<const TokenId> response) {
  const TaskSpec& task = prompt.task;
  if (static_cast<int>(response.size()) > task.max_len) return 0;
  for (TokenId t : response) {
    if (t < 0 || t >= task.vocab_size) return 0;
  }
  const int length = winning_length(task);
  if (static_cast<int>(response.size()) != length) return 0;
  if (response.back() != kEos) return 0;

  if (task.kind == TaskKind::kBranchingSum) {
    if (!task.target) return 0;
    int sum = 0;
    for (int pos = 0; pos + 1 < length; ++pos) {
      if (pos % 2 == 1) {
        if (response[pos] != kConnector) return 0;
        continue;
      }
      const auto digit = token_digit(response[pos]);
      if (!digit) return 0;
      sum += *digit;
    }
    return sum % 10 == *task.target ? 1 : 0;
  }

  if (!task.bits) return 0;
  const std::string& bits = *task.bits;
  int parity = 0;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    const int bit = bits[i] - '0';
    parity ^= bit;
    if (response[i] != digit_token(bit)) return 0;
  }
  return response[bits.size()] == digit_token(parity) ? 1 : 0;
}

// Tokens the sampler may emit at response position `pos` of a guided task;
// empty means the whole vocabulary.
inline std::vector<TokenId> allowed_tokens(const Prompt& prompt, int pos) {
  const TaskSpec& task = prompt.task;
  if (!task.guided) return {};
  const int length = winning_length(task);
  if (pos >= length - 1) return {kEos};
  if (task.kind == TaskKind::kBranchingSum) {
    if (pos % 2 == 1) return {kConnector};
    std::vector<TokenId> digits;
    for (int d = 0; d < 10; ++d) digits.push_back(digit_token(d));
    return digits;
  }
  return {digit_token(0), digit_token(1)};
}

// Exhaustive count of reward-1 responses of the task's fixed shape. Every
// free position (digits for branching-sum, bits + parity for copy-parity)
// ranges over the whole vocabulary; structural positions are fixed.
inline std::uint64_t enumerate_winning(const TaskSpec& spec,
                                       std::uint64_t max_space = 10'000'000ULL) {
  validate(spec);
  if (spec.kind == TaskKind::kBranchingSum && !spec.target) {
    throw ConfigError("enumerate_winning needs a resolved branching-sum target");
  }
  if (spec.kind == TaskKind::kCopyParity && !spec.bits) {
    throw ConfigError("enumerate_winning needs resolved copy-parity bits");
  }
  Prompt prompt = make_prompt(spec, 0);
  const int length = winning_length(spec);
  std::vector<int> free_positions;
  std::vector<TokenId> response(static_cast<std::size_t>(length), kConnector);
  response.back() = kEos;
  for (int pos = 0; pos + 1 < length; ++pos) {
    if (spec.kind == TaskKind::kCopyParity || pos % 2 == 0) free_positions.push_back(pos);
  }
  long double space = 1.0L;
  for (std::size_t i = 0; i < free_positions.size(); ++i) space *= spec.vocab_size;
  if (space > static_cast<long double>(max_space)) {
    throw ConfigError("search space too large for enumeration");
  }
  std::uint64_t count = 0;
  std::vector<int> odometer(free_positions.size(), 0);
  while (true) {
    for (std::size_t i = 0; i < free_positions.size(); ++i) {
      response[static_cast<std::size_t>(free_positions[i])] = odometer[i];
    }
    count += static_cast<std::uint64_t>(score(prompt, response));
    std::size_t k = 0;
    while (k < odometer.size() && ++odometer[k] == spec.vocab_size) odometer[k++] = 0;
    if (k == odometer.size()) break;
  }
  return count;
}

}  // namespace hapo::env

#endif  // HAPO_ENV_HPP_
