#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "hex4d/composite.h"
#include "hex4d/param_store.h"
#include "hex4d/tensor.h"

namespace hex4d {

// Bilinear lookup table into a {U,V,F} feature plane: four taps per query
// point, idx holding flattened texel rows (u * V + v) and w the weights.
template <class S>
struct BilinearTaps {
  int64_t npoints = 0;
  std::vector<int32_t> idx;  // 4 * npoints
  std::vector<S> w;          // 4 * npoints
};

// Define-by-run reverse-mode tape over batched tensors. Every op evaluates
// eagerly, records a backward closure, and returns a node id. backward(loss)
// requires a scalar, finite loss node and replays closures in reverse
// creation order; parameter gradients accumulate into the bound ParamStore.
// Values are immutable once created; build a fresh tape per step/chunk.
template <class S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // ---- leaves -------------------------------------------------------------
  int constant(Tensor<S> v);              // no gradient tracked
  int leaf(Tensor<S> v);                  // tracked, tape-owned gradient
  int param(ParamStore<S>& ps, int entry_index);  // gradient flows to store
  int param(ParamStore<S>& ps, const std::string& name) {
    return param(ps, ps.index_of(name));
  }

  // ---- dense linear algebra ------------------------------------------------
  // x:(N,K) w:(K,M) b:(M) -> (N,M)
  int linear(int x, int w, int b);
  int matmul(int a, int b);         // (N,K)x(K,M)
  int matmul_transb(int a, int b);  // (N,K)x(M,K)^T -> (N,M)

  // ---- elementwise ----------------------------------------------------------
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int add_scaled(int a, int b, S ca, S cb);  // ca*a + cb*b
  int scale(int a, S c);
  int add_const_scalar(int a, S c);
  int mul_const(int a, Tensor<S> w);  // elementwise by a fixed tensor
  int relu(int a);
  int leaky_relu(int a, S slope);
  int sigmoid(int a);
  int softplus(int a);
  int tanh_(int a);
  int square(int a);
  int clamp01(int a);

  // ---- shape ----------------------------------------------------------------
  int concat_cols(const std::vector<int>& xs);
  int slice_cols(int a, int64_t c0, int64_t c1);
  int concat_rows(const std::vector<int>& xs);
  int slice_rows(int a, int64_t r0, int64_t r1);
  int reshape(int a, std::vector<int> shape);  // same element count
  int transpose2d(int a);                      // (R,C) -> (C,R)

  // ---- fusion / sampling -----------------------------------------------------
  int hadamard_list(const std::vector<int>& xs);  // elementwise product of k tensors
  // grid:(U,V,F) -> (npoints,F) via precomputed taps
  int gather_bilinear(int grid, std::shared_ptr<BilinearTaps<S>> taps);

  // ---- rendering --------------------------------------------------------------
  // sigma:(N,1) rgb:(N,3) -> (nrays,5) [r,g,b,opacity,depth]; optionally
  // exposes forward sample weights for losses that need them detached.
  int composite(int sigma, int rgb, std::shared_ptr<CompositePlan<S>> plan,
                std::vector<S>* weights_out = nullptr);

  // ---- rows / reductions --------------------------------------------------------
  int rowsum(int a);                       // (N,C) -> (N,1)
  int normalize_rows(int a, S eps, std::vector<uint8_t>* valid_out = nullptr);
  int softmax_rows(int a);
  int sum(int a);                          // -> scalar
  int mean(int a);                         // -> scalar
  int dot_const(int a, Tensor<S> w);       // sum(a*w) -> scalar
  int mse_const(int a, const Tensor<S>& target);   // mean squared error -> scalar
  int l1_const(int a, const Tensor<S>& target);    // mean absolute error -> scalar
  int l2norm(int a, S floor);              // sqrt(sum a^2) -> scalar
  int bce_with_logits(int logits, S target);       // mean BCE -> scalar

  // ---- conv / norm (enhancer) ------------------------------------------------
  // x:(C,H,W) w:(OC,C,kh,kw) b:(OC) -> (OC,OH,OW)
  int conv2d(int x, int w, int b, int stride, int pad);
  // x:(C,H,W) w:(C,OC,kh,kw) b:(OC) -> (OC,(H-1)s-2p+kh, ...)
  int conv2d_transpose(int x, int w, int b, int stride, int pad);
  // x:(C,H,W) gamma/beta:(C)
  int instance_norm(int x, int gamma, int beta, S eps = S(1e-5));

  // ---- access -------------------------------------------------------------------
  const Tensor<S>& val(int id) const;
  const Tensor<S>& grad(int id);  // allocates zeros if never touched
  bool tracked(int id) const;
  int num_nodes() const { return static_cast<int>(nodes_.size()); }

  // Seeds d(loss)=1 and runs all recorded closures in reverse order. The loss
  // must be a scalar node; a non-finite loss raises NumericError. One backward
  // per tape: parameter gradients accumulate across tapes in the store, so
  // summing objectives happens either on-graph or across separate tapes.
  void backward(int loss);

  // Adds g into the adjoint of `id` before backward() (external adjoint
  // injection, e.g. score-distillation pixel gradients).
  void accumulate_grad(int id, const Tensor<S>& g);

 private:
  struct Node {
    Tensor<S> value;
    std::unique_ptr<Tensor<S>> grad;   // lazily allocated for tape-owned grads
    Tensor<S>* ext_grad = nullptr;     // parameter gradient in the store
    bool tracked = false;
    std::function<void(Tape&)> back;   // null for leaves/constants
  };

  int push(Tensor<S> value, bool tracked, std::function<void(Tape&)> back);
  Node& node(int id);
  const Node& node(int id) const;
  Tensor<S>& grad_buf(int id);  // allocates zeros on first use
  bool has_grad(int id) const;
  // f(x) -> y, df(x, y) -> dy/dx
  template <class F, class DF>
  int eltwise(int a, F f, DF df);

  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace hex4d
