#pragma once

#include <cstdint>
#include <filesystem>
#include <unistd.h>
#include <string>
#include <vector>

#include "punr/model.hpp"
#include "punr/news.hpp"
#include "punr/rng.hpp"
#include "punr/tensor.hpp"

namespace punr::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = true,
                            std::string name = "x") {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.normal(0.0, scale);
  return Tensor::from(std::move(shape), std::move(v), requires_grad, std::move(name));
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() /
           ("punr-test-" + tag + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline ModelConfig tiny_config(std::size_t vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.hidden_dim = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.ffn_dim = 16;
  c.max_seq_len = 24;
  c.max_segments = 4;
  c.dropout = 0.0;
  return c;
}

// Catalog of `n` news items whose titles are "w<i> w<i+1> ..." with `len` words.
inline NewsCatalog word_catalog(std::size_t n, std::size_t len) {
  NewsCatalog cat;
  for (std::size_t i = 0; i < n; ++i) {
    std::string title;
    for (std::size_t j = 0; j < len; ++j) {
      if (j) title += ' ';
      title += "w" + std::to_string((i * len + j) % 37);
    }
    cat.add({"N" + std::to_string(i + 1), title, {}});
  }
  return cat;
}

}  // namespace punr::testing
