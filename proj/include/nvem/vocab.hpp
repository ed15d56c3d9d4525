#pragma once

// Closed instruction vocabulary. File format: one `<token> <id>` pair per
// line, ids contiguous from 0.

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nvem {

struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kEos = 2;

  std::vector<std::string> tokens;
  std::map<std::string, int> index;

  Vocab() = default;

  static Vocab with_reserved() {
    Vocab v;
    v.add("<pad>");
    v.add("<unk>");
    v.add("<eos>");
    return v;
  }

  int add(const std::string& tok) {
    auto it = index.find(tok);
    if (it != index.end()) return it->second;
    int id = static_cast<int>(tokens.size());
    tokens.push_back(tok);
    index.emplace(tok, id);
    return id;
  }

  int id(const std::string& tok) const {
    auto it = index.find(tok);
    return it == index.end() ? kUnk : it->second;
  }

  const std::string& word(int id) const {
    if (id < 0 || id >= static_cast<int>(tokens.size()))
      throw std::out_of_range("token id out of range");
    return tokens[static_cast<std::size_t>(id)];
  }

  int size() const { return static_cast<int>(tokens.size()); }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write vocabulary file: " + path);
    for (int i = 0; i < size(); ++i) out << tokens[i] << ' ' << i << '\n';
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read vocabulary file: " + path);
    Vocab v;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream ss(line);
      std::string tok;
      int id = -1;
      if (!(ss >> tok >> id) || id != static_cast<int>(v.tokens.size()))
        throw std::runtime_error("malformed vocabulary line " + std::to_string(lineno));
      v.add(tok);
    }
    return v;
  }
};

}  // namespace nvem
