#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "chartlab/numerics/tensor.hpp"

namespace chartlab::num {

/// Handle to a value recorded on a Tape. Only meaningful for the tape that
/// produced it.
struct Var {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t id = kNone;
  bool valid() const noexcept { return id != kNone; }
};

/// Single-use reverse-mode recorder. Build a forward pass from the primitives
/// below, then call backward() once on a scalar result.
///
/// Matrices are [rows, cols]; a rank-1 tensor behaves as a single row.
/// Every primitive checks its output for non-finite values and throws
/// NumericalError naming itself.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf whose gradient is reported under `name` by backward().
  Var param(const std::string& name, const Tensor& value);
  Var param(const ParamSet& set, const std::string& name);

  const Tensor& value(Var v) const;
  std::size_t node_count() const noexcept { return nodes_.size(); }

  Var matmul(Var a, Var b);     ///< [m,k] x [k,n]
  Var matmul_nt(Var a, Var b);  ///< [m,k] x [n,k]^T
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  ///< elementwise
  /// a[m,n] + row[1,n] broadcast over rows.
  Var add_row(Var a, Var row);
  /// a[t*L, n] + block[L, n] repeated t times (positional embeddings).
  Var add_tiled(Var a, Var block);
  Var scale(Var a, double k);
  /// a * s where s holds a single element.
  Var scale_by(Var a, Var s);
  Var exp(Var a);
  Var tanh(Var a);
  Var relu(Var a);
  Var gelu(Var a);  ///< tanh approximation
  Var softmax_rows(Var a);
  /// Mean over rows of -log softmax(row)[target]; max-subtracted.
  Var cross_entropy_rows(Var logits, std::span<const std::size_t> targets);
  Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);
  Var l2_normalize_rows(Var a);
  Var transpose(Var a);
  Var concat_rows(Var a, Var b);
  Var concat_cols(Var a, Var b);
  /// out[i] = table[ids[i]]
  Var gather_rows(Var table, std::span<const std::size_t> ids);
  /// x is [n*seq_len, d]; returns [n, d], averaging the first lengths[s]
  /// rows of each sequence. Empty `lengths` means every sequence is full.
  Var segment_mean(Var x, std::size_t seq_len, std::span<const std::size_t> lengths = {});
  /// Multi-head scaled dot-product self-attention. qkv is [n*seq_len, 3d]
  /// laid out as [Q | K | V]; keys at positions >= lengths[s] are masked.
  /// Returns [n*seq_len, d].
  Var self_attention(Var qkv, std::size_t seq_len, std::size_t heads,
                     std::span<const std::size_t> lengths = {});
  Var sum(Var a);
  Var mean(Var a);

  /// Exact gradients of a scalar `loss` for every parameter leaf reachable
  /// from it. Throws ContractError for a non-scalar loss.
  GradientSet backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool needs_grad = false;
    std::string op;
    std::string param_name;
    std::function<void(Tape&, std::size_t)> backward;
  };

  Var push(std::string op, Tensor value, bool needs_grad,
           std::function<void(Tape&, std::size_t)> backward = {});
  const Node& node(Var v) const;
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }
  Tensor& grad_of(std::size_t id);
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }

  std::vector<Node> nodes_;
};

/// -log softmax(logits)[target] for a single logit vector, max-subtracted.
double softmax_cross_entropy(std::span<const double> logits, std::size_t target);

}  // namespace chartlab::num
