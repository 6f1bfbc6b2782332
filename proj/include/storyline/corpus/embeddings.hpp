#pragma once
// Pre-trained word vectors as text: "token v1 ... vd" per line.

#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "storyline/corpus/session.hpp"
#include "storyline/corpus/vocabulary.hpp"

namespace storyline::corpus {

struct EmbeddingLoadStats {
  std::size_t found = 0;
  std::size_t missing = 0;
};

// Fills a [vocab, dim] row-major table. Tokens absent from the file get
// U(-0.05, 0.05) rows from `seed`; the PAD row is zero.
template <class T>
EmbeddingLoadStats load_embeddings(const std::string& path, const Vocabulary& vocab,
                                   std::size_t dim, std::vector<T>& table, std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open embeddings '" + path + "'");
  table.assign(vocab.size() * dim, T(0));
  std::vector<bool> have(vocab.size(), false);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    std::string token;
    ss >> token;
    std::vector<double> v;
    double x;
    while (ss >> x) v.push_back(x);
    if (!ss.eof())
      throw CorpusError(path + ":" + std::to_string(line_no) + ": non-numeric vector entry");
    if (v.size() != dim)
      throw CorpusError(path + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(dim) + " values, got " + std::to_string(v.size()));
    if (!vocab.contains(token)) continue;
    const auto id = static_cast<std::size_t>(vocab.id(token));
    for (std::size_t j = 0; j < dim; ++j) table[id * dim + j] = static_cast<T>(v[j]);
    have[id] = true;
  }
  EmbeddingLoadStats st;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (std::size_t id = 1; id < vocab.size(); ++id) {
    if (have[id]) {
      ++st.found;
      continue;
    }
    ++st.missing;
    for (std::size_t j = 0; j < dim; ++j) table[id * dim + j] = static_cast<T>(u(rng));
  }
  for (std::size_t j = 0; j < dim; ++j) table[j] = T(0);
  return st;
}

// Every token except PAD, values printed with 9 significant digits.
template <class T>
void save_embeddings(const std::string& path, const Vocabulary& vocab, std::size_t dim,
                     const std::vector<T>& table) {
  if (table.size() != vocab.size() * dim)
    throw CorpusError("embedding table does not match vocabulary size x dim");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CorpusError("cannot open '" + path + "' for writing");
  char buf[32];
  for (std::size_t id = 1; id < vocab.size(); ++id) {
    out << vocab.token(static_cast<std::int32_t>(id));
    for (std::size_t j = 0; j < dim; ++j) {
      std::snprintf(buf, sizeof buf, " %.9g", double(table[id * dim + j]));
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace storyline::corpus
