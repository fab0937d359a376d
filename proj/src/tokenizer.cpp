#include "paratool/tokenizer.hpp"

#include <sstream>
#include <stdexcept>

namespace paratool {

std::vector<std::string> split_symbols(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
  for (size_t i = 0; i < symbols_.size(); ++i) {
    const auto [it, inserted] = index_.emplace(symbols_[i], static_cast<int>(i));
    if (!inserted) throw std::invalid_argument("duplicate vocabulary symbol: " + symbols_[i]);
  }
}

int Vocabulary::id(const std::string& symbol) const {
  const auto it = index_.find(symbol);
  if (it == index_.end()) throw std::out_of_range("out-of-vocabulary symbol: " + symbol);
  return it->second;
}

const std::string& Vocabulary::symbol(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("token id out of range");
  return symbols_[static_cast<size_t>(id)];
}

std::vector<int> Vocabulary::tokenize(const std::string& text) const {
  std::vector<int> out;
  for (const auto& sym : split_symbols(text)) out.push_back(id(sym));
  return out;
}

std::string Vocabulary::detokenize(const std::vector<int>& tokens) const {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += symbol(tokens[i]);
  }
  return out;
}

}  // namespace paratool
