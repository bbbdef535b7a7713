#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace zestdiff {

inline constexpr int kMaxPromptTokens = 16;

/// Fixed word-level vocabulary of the toy text encoder.
class Vocabulary {
 public:
  Vocabulary();
  explicit Vocabulary(std::vector<std::string> words);

  std::int64_t size() const { return static_cast<std::int64_t>(words_.size()); }
  std::int64_t id(const std::string& word) const;  // throws on unknown words
  bool contains(const std::string& word) const;
  const std::string& word(std::int64_t id) const;
  const std::vector<std::string>& words() const { return words_; }

  std::int64_t pad_id() const { return id("<pad>"); }
  std::int64_t null_id() const { return id("<null>"); }

 private:
  std::vector<std::string> words_;
};

/// A tokenised prompt of at most kMaxPromptTokens ids. The encoder pads it
/// with <pad> to a fixed context length.
struct PromptSpec {
  std::vector<std::int64_t> tokens;

  static PromptSpec encode(const std::string& text, const Vocabulary& vocab);
  /// The learned null conditioning used for classifier-free guidance.
  static PromptSpec null_prompt(const Vocabulary& vocab);

  std::string text(const Vocabulary& vocab) const;
  /// Tokens padded to `length` with <pad>; throws if too long or ids invalid.
  std::vector<std::int64_t> padded(const Vocabulary& vocab, int length = kMaxPromptTokens) const;
};

}  // namespace zestdiff
