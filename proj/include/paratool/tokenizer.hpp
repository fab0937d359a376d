#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace paratool {

// Closed whitespace-separated symbol vocabulary; one symbol per token.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> symbols);

  int size() const { return static_cast<int>(symbols_.size()); }
  bool contains(const std::string& symbol) const { return index_.count(symbol) > 0; }
  int id(const std::string& symbol) const;  // throws on out-of-vocabulary
  const std::string& symbol(int id) const;
  const std::vector<std::string>& symbols() const { return symbols_; }

  std::vector<int> tokenize(const std::string& text) const;
  std::string detokenize(const std::vector<int>& tokens) const;

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> index_;
};

// One training/eval sequence with the target-action region marked. The span is
// a suffix: [span_start, tokens.size()).
struct TokenSequence {
  std::vector<int> tokens;
  int span_start = 0;

  int span_len() const { return static_cast<int>(tokens.size()) - span_start; }
};

std::vector<std::string> split_symbols(const std::string& text);

}  // namespace paratool
