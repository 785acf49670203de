#pragma once

#include <span>
#include <vector>

#include "punr/rng.hpp"
#include "punr/tensor.hpp"

namespace punr::ops {

// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [m x k] * [n x k]^T -> [m x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Same shape, or `b` of shape [n] / [1 x n] broadcast over the rows of an [m x n] `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor softmax(const Tensor& a, std::size_t axis);
// Pure normalization (no affine) along `axis`.
Tensor layer_norm(const Tensor& a, std::size_t axis, double eps);
// Exact erf GELU.
Tensor gelu(const Tensor& a);
Tensor tanh(const Tensor& a);

// Rows of a rank-2 `table` selected by `indices`. `table_name` appears in range errors.
Tensor embedding_gather(const Tensor& table, std::span<const int> indices,
                        const char* table_name = nullptr);

// Rank-2 only; axis 0 stacks rows, axis 1 joins columns.
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Rank-2 half-open range [begin, end) along `axis`.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);

// Replaces entries where mask is true by `value`; those entries get zero gradient.
Tensor masked_fill(const Tensor& a, const std::vector<bool>& mask, double value);

// Inverted dropout; identity when rate == 0.
Tensor dropout(const Tensor& a, double rate, Rng& rng);

constexpr int kIgnoreIndex = -100;

// Mean negative log-likelihood of `targets` under row-wise softmax of [n x V] logits.
// Rows whose target equals ignore_index are skipped; all-ignored returns 0.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     int ignore_index = kIgnoreIndex);

}  // namespace punr::ops
