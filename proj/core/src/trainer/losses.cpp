#include <numeric>

#include "chartlab/trainer/trainer.hpp"
#include "chartlab/util/error.hpp"

namespace chartlab::trainer {

Var symmetric_infonce(Tape& t, Var logits) {
  const Tensor& L = t.value(logits);
  if (L.rank() != 2 || L.rows() != L.cols()) {
    throw ContractError("symmetric_infonce: logits must be square, got " + num::shape_string(L.shape()));
  }
  std::vector<std::size_t> diag(L.rows());  // before any push
  std::iota(diag.begin(), diag.end(), 0);
  Var rows = t.cross_entropy_rows(logits, diag);
  Var cols = t.cross_entropy_rows(t.transpose(logits), diag);
  return t.scale(t.add(rows, cols), 0.5);
}

double symmetric_infonce(const Tensor& logits) {
  Tape t;
  return t.value(symmetric_infonce(t, t.constant(logits))).item();
}

Var hardneg_infonce(Tape& t, Var images, Var positives, Var negatives, Var log_scale) {
  // Copy sizes out: pushing new nodes may relocate tape storage.
  const std::size_t n = t.value(images).rows();
  const std::size_t d = t.value(images).cols();
  {
    const Tensor& P = t.value(positives);
    if (P.rows() != n || P.cols() != d) {
      throw ContractError("hardneg_infonce: images " + num::shape_string(t.value(images).shape()) +
                          " and positives " + num::shape_string(P.shape()) + " must match");
    }
  }
  Var s = t.exp(log_scale);
  Var logits = t.scale_by(t.matmul_nt(images, positives), s);
  if (!negatives.valid()) return symmetric_infonce(t, logits);

  const Tensor& N = t.value(negatives);
  if (N.cols() != d || N.rows() % n != 0) {
    throw ContractError("hardneg_infonce: negatives " + num::shape_string(N.shape()) +
                        " must hold K rows per image of width " + std::to_string(d));
  }
  std::vector<std::size_t> diag(n);
  std::iota(diag.begin(), diag.end(), 0);
  Var neg_logits = t.scale_by(t.matmul_nt(images, negatives), s);
  Var i2t = t.cross_entropy_rows(t.concat_cols(logits, neg_logits), diag);
  Var t2i = t.cross_entropy_rows(t.transpose(logits), diag);
  return t.scale(t.add(i2t, t2i), 0.5);
}

double hardneg_infonce(const Tensor& images, const Tensor& positives, const Tensor* negatives, double log_scale) {
  Tape t;
  Var neg = negatives ? t.constant(*negatives) : Var{};
  Var loss = hardneg_infonce(t, t.constant(images), t.constant(positives), neg,
                             t.constant(Tensor::matrix(1, 1, log_scale)));
  return t.value(loss).item();
}

}  // namespace chartlab::trainer
