#pragma once

#include <functional>
#include <string>
#include <vector>

#include "g2p/tensor.hpp"

namespace g2p {

// Finite-difference verification of reverse-mode gradients.
//
// `loss_fn` must rebuild the computation from scratch on the given graph and
// return a scalar loss that depends on `params` (leaf tensors with
// requires_grad). Central differences with step `eps`; per-element error is
//   |analytic - fd| / max(|analytic| + |fd|, floor)
// so tiny gradients are compared absolutely and large ones relatively.

template <class T>
struct GradCheckReport {
  T max_err = T(0);
  size_t worst_param = 0;
  int64_t worst_index = -1;
  T worst_analytic = T(0);
  T worst_fd = T(0);
  int64_t n_checked = 0;
};

template <class T>
GradCheckReport<T> grad_check(const std::function<Tensor<T>(Graph<T>&)>& loss_fn,
                              std::vector<Tensor<T>> params, T eps = T(1e-5),
                              T floor = T(0.01)) {
  for (auto& p : params)
    if (!p.requires_grad()) throw ContractError("grad_check param without requires_grad");

  // Analytic pass.
  for (auto& p : params) p.zero_grad();
  Graph<T> g(true);
  Tensor<T> loss = loss_fn(g);
  if (!loss.is_scalar()) throw ContractError("grad_check loss must be scalar");
  g.backward(loss);
  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.grad());

  auto eval = [&]() -> T {
    Graph<T> ng(false);
    return loss_fn(ng).item();
  };

  GradCheckReport<T> rep;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    for (int64_t i = 0; i < p.numel(); ++i) {
      const T saved = p.data()[i];
      p.data()[i] = saved + eps;
      const T lp = eval();
      p.data()[i] = saved - eps;
      const T lm = eval();
      p.data()[i] = saved;
      const T fd = (lp - lm) / (T(2) * eps);
      const T an = analytic[pi][static_cast<size_t>(i)];
      const T err = std::abs(an - fd) / std::max(std::abs(an) + std::abs(fd), floor);
      ++rep.n_checked;
      if (err > rep.max_err) {
        rep.max_err = err;
        rep.worst_param = pi;
        rep.worst_index = i;
        rep.worst_analytic = an;
        rep.worst_fd = fd;
      }
    }
  }
  return rep;
}

}  // namespace g2p
