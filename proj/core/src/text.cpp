#include "zestdiff/text.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace zestdiff {

namespace {
std::vector<std::string> default_words() {
  // Ids 0..17 are used by the shapes captions; the remainder keeps free-form
  // prompts encodable.
  return {"<pad>", "<null>", "a",     "and",    "on",     "background", "circle", "square", "triangle", "red",
          "green", "blue",   "yellow", "cyan",  "magenta", "gray",      "black",  "white",  "the",      "with",
          "of",    "in",     "an",     "small", "large",  "big",        "left",   "right",  "top",      "bottom",
          "center", "near",  "next",   "to",    "above",  "below",      "image",  "photo",  "shape",    "object"};
}
}  // namespace

Vocabulary::Vocabulary() : words_(default_words()) {}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  if (!contains("<pad>") || !contains("<null>")) throw std::invalid_argument("vocabulary must contain <pad> and <null>");
}

std::int64_t Vocabulary::id(const std::string& word) const {
  auto it = std::find(words_.begin(), words_.end(), word);
  if (it == words_.end()) throw std::invalid_argument("unknown token '" + word + "'");
  return std::distance(words_.begin(), it);
}

bool Vocabulary::contains(const std::string& word) const {
  return std::find(words_.begin(), words_.end(), word) != words_.end();
}

const std::string& Vocabulary::word(std::int64_t id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
  return words_[static_cast<size_t>(id)];
}

PromptSpec PromptSpec::encode(const std::string& text, const Vocabulary& vocab) {
  PromptSpec p;
  std::istringstream is(text);
  std::string w;
  while (is >> w) p.tokens.push_back(vocab.id(w));
  if (p.tokens.empty()) throw std::invalid_argument("prompt is empty");
  if (p.tokens.size() > static_cast<size_t>(kMaxPromptTokens)) {
    throw std::invalid_argument("prompt has " + std::to_string(p.tokens.size()) + " tokens; at most " +
                                std::to_string(kMaxPromptTokens) + " allowed");
  }
  return p;
}

PromptSpec PromptSpec::null_prompt(const Vocabulary& vocab) { return PromptSpec{{vocab.null_id()}}; }

std::string PromptSpec::text(const Vocabulary& vocab) const {
  std::string out;
  for (auto id : tokens) {
    if (!out.empty()) out += ' ';
    out += vocab.word(id);
  }
  return out;
}

std::vector<std::int64_t> PromptSpec::padded(const Vocabulary& vocab, int length) const {
  if (tokens.empty()) throw std::invalid_argument("prompt is empty");
  if (tokens.size() > static_cast<size_t>(length)) {
    throw std::invalid_argument("prompt has " + std::to_string(tokens.size()) + " tokens; at most " +
                                std::to_string(length) + " allowed");
  }
  for (auto id : tokens) {
    if (id < 0 || id >= vocab.size()) throw std::invalid_argument("token id " + std::to_string(id) + " outside vocabulary");
  }
  std::vector<std::int64_t> out = tokens;
  out.resize(static_cast<size_t>(length), vocab.pad_id());
  return out;
}

}  // namespace zestdiff
