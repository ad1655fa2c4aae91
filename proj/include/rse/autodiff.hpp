// Copyright 2026 The RSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Reverse-mode automatic differentiation on a flat tape of dense tensors.
// Nodes are created in topological order; backward() walks the tape in
// reverse calling each node's adjoint closure. Gradients are exact (same
// 64-bit arithmetic as the forward pass), which the finite-difference
// checks in the test suite rely on.

#ifndef RSE_AUTODIFF_HPP_
#define RSE_AUTODIFF_HPP_

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "rse/tensor.hpp"
#include "rse/util.hpp"

namespace rse {

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  struct Node {
    Tensor val;
    Tensor grad;  // allocated on first accumulation
    bool needs_grad = false;
    std::function<void(Tape&)> back;
  };

  size_t size() const { return nodes_.size(); }

  int leaf(Tensor v) { return push(std::move(v), true, nullptr); }
  int constant(Tensor v) { return push(std::move(v), false, nullptr); }

  const Tensor& val(int id) const { return nodes_[id].val; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }

  // Gradient of the last backward() root w.r.t. node id (zeros if detached).
  Tensor grad(int id) const {
    const Node& n = nodes_[id];
    if (!n.grad.v.empty()) return n.grad;
    Tensor z(n.val.shape);
    return z;
  }

  // Escape hatch for composite ops (e.g. synthesis back to the waveform).
  int make_node(Tensor val, bool needs_grad, std::function<void(Tape&)> back) {
    return push(std::move(val), needs_grad, std::move(back));
  }
  void set_back(int id, std::function<void(Tape&)> back) {
    nodes_[id].back = std::move(back);
  }

  Tensor& grad_ref(int id) {
    Node& n = nodes_[id];
    if (n.grad.v.empty()) n.grad = Tensor(n.val.shape);
    return n.grad;
  }
  bool grad_live(int id) const { return !nodes_[id].grad.v.empty(); }

  void backward(int root) {
    if (nodes_[root].val.numel() != 1)
      throw NumericError("backward: root must be a scalar");
    for (Node& n : nodes_) n.grad.v.clear();
    grad_ref(root).v[0] = 1.0;
    for (int i = root; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.back && n.needs_grad && !n.grad.v.empty()) n.back(*this);
    }
  }

  // ---- elementwise binary ----

  int add(int a, int b) {
    check_same(a, b, "add");
    Tensor out = nodes_[a].val;
    const Tensor& vb = nodes_[b].val;
    for (size_t i = 0; i < out.numel(); ++i) out.v[i] += vb.v[i];
    const int id = push(std::move(out), needs(a) || needs(b), nullptr);
    set_back(id, [id, a, b](Tape& t) {
      const Tensor& g = t.nodes_[id].grad;
      t.accum(a, [&](Tensor& d) {
        for (size_t i = 0; i < g.numel(); ++i) d.v[i] += g.v[i];
      });
      t.accum(b, [&](Tensor& d) {
        for (size_t i = 0; i < g.numel(); ++i) d.v[i] += g.v[i];
      });
    });
    return id;
  }

  int sub(int a, int b) {
    check_same(a, b, "sub");
    Tensor out = nodes_[a].val;
    const Tensor& vb = nodes_[b].val;
    for (size_t i = 0; i < out.numel(); ++i) out.v[i] -= vb.v[i];
    const int id = push(std::move(out), needs(a) || needs(b), nullptr);
    set_back(id, [id, a, b](Tape& t) {
      const Tensor& g = t.nodes_[id].grad;
      t.accum(a, [&](Tensor& d) {
        for (size_t i = 0; i < g.numel(); ++i) d.v[i] += g.v[i];
      });
      t.accum(b, [&](Tensor& d) {
        for (size_t i = 0; i < g.numel(); ++i) d.v[i] -= g.v[i];
      });
    });
    return id;
  }

  int mul(int a, int b) {
    check_same(a, b, "mul");
    Tensor out = nodes_[a].val;
    const Tensor& vb = nodes_[b].val;
    for (size_t i = 0; i < out.numel(); ++i) out.v[i] *= vb.v[i];
    const int id = push(std::move(out), needs(a) || needs(b), nullptr);
    set_back(id, [id, a, b](Tape& t) {
      const Tensor& g = t.nodes_[id].grad;
      const Tensor& va = t.nodes_[a].val;
      const Tensor& vb2 = t.nodes_[b].val;
      t.accum(a, [&](Tensor& d) {
        for (size_t i = 0; i < g.numel(); ++i) d.v[i] += g.v[i] * vb2.v[i];
      });
      t.accum(b, [&](Tensor& d) {
        for (size_t i = 0; i < g.numel(); ++i) d.v[i] += g.v[i] * va.v[i];
      });
    });
    return id;
  }

  int div(int a, int b) {
    check_same(a, b, "div");
    Tensor out = nodes_[a].val;
    const Tensor& vb = nodes_[b].val;
    for (size_t i = 0; i < out.numel(); ++i) out.v[i] /= vb.v[i];
    const int id = push(std::move(out), needs(a) || needs(b), nullptr);
    set_back(id, [id, a, b](Tape& t) {
      const Tensor& g = t.nodes_[id].grad;
      const Tensor& va = t.nodes_[a].val;
      const Tensor& vb2 = t.nodes_[b].val;
      t.accum(a, [&](Tensor& d) {
        for (size_t i = 0; i < g.numel(); ++i) d.v[i] += g.v[i] / vb2.v[i];
      });
      t.accum(b, [&](Tensor& d) {
        for (size_t i = 0; i < g.numel(); ++i)
          d.v[i] -= g.v[i] * va.v[i] / (vb2.v[i] * vb2.v[i]);
      });
    });
    return id;
  }

  // ---- scalar-parameter ops ----

  int scale(int a, double c) {
    Tensor out = nodes_[a].val;
    for (double& x : out.v) x *= c;
    const int id = push(std::move(out), needs(a), nullptr);
    set_back(id, [id, a, c](Tape& t) {
      const Tensor& g = t.nodes_[id].grad;
      t.accum(a, [&](Tensor& d) {
        for (size_t i = 0; i < g.numel(); ++i) d.v[i] += c * g.v[i];
      });
    });
    return id;
  }

  int add_scalar(int a, double c) {
    Tensor out = nodes_[a].val;
    for (double& x : out.v) x += c;
    const int id = push(std::move(out), needs(a), nullptr);
    set_back(id, [id, a](Tape& t) {
      const Tensor& g = t.nodes_[id].grad;
      t.accum(a, [&](Tensor& d) {
        for (size_t i = 0; i < g.numel(); ++i) d.v[i] += g.v[i];
      });
    });
    return id;
  }

  // ---- elementwise unary ----

  int tanh_op(int a) {
    Tensor out = nodes_[a].val;
    for (double& x : out.v) x = std::tanh(x);
    const int id = push(std::move(out), needs(a), nullptr);
    set_back(id, [id, a](Tape& t) {
      const Tensor& g = t.nodes_[id].grad;
      const Tensor& y = t.nodes_[id].val;
      t.accum(a, [&](Tensor& d) {
        for (size_t i = 0; i < g.numel(); ++i) d.v[i] += g.v[i] * (1.0 - y.v[i] * y.v[i]);
      });
    });
    return id;
  }

  int sigmoid_op(int a) {
    Tensor out = nodes_[a].val;
    for (double& x : out.v) x = 1.0 / (1.0 + std::exp(-x));
    const int id = push(std::move(out), needs(a), nullptr);
    set_back(id, [id, a](Tape& t) {
      const Tensor& g = t.nodes_[id].grad;
      const Tensor& y = t.nodes_[id].val;
      t.accum(a, [&](Tensor& d) {
        for (size_t i = 0; i < g.numel(); ++i)
          d.v[i] += g.v[i] * y.v[i] * (1.0 - y.v[i]);
      });
    });
    return id;
  }

  int log_op(int a) {
    Tensor out = nodes_[a].val;
    for (double& x : out.v) {
      if (!(x > 0.0)) throw NumericError("log: non-positive input");
      x = std::log(x);
    }
    const int id = push(std::move(out), needs(a), nullptr);
    set_back(id, [id, a](Tape& t) {
      const Tensor& g = t.nodes_[id].grad;
      const Tensor& va = t.nodes_[a].val;
      t.accum(a, [&](Tensor& d) {
        for (size_t i = 0; i < g.numel(); ++i) d.v[i] += g.v[i] / va.v[i];
      });
    });
    return id;
  }

  int sqrt_op(int a) {
    Tensor out = nodes_[a].val;
    for (double& x : out.v) {
      if (x < 0.0) throw NumericError("sqrt: negative input");
      x = std::sqrt(x);
    }
    const int id = push(std::move(out), needs(a), nullptr);
    set_back(id, [id, a](Tape& t) {
      const Tensor& g = t.nodes_[id].grad;
      const Tensor& y = t.nodes_[id].val;
      t.accum(a, [&](Tensor& d) {
        for (size_t i = 0; i < g.numel(); ++i) d.v[i] += 0.5 * g.v[i] / y.v[i];
      });
    });
    return id;
  }

  int recip_op(int a) {
    Tensor out = nodes_[a].val;
    for (double& x : out.v) x = 1.0 / x;
    const int id = push(std::move(out), needs(a), nullptr);
    set_back(id, [id, a](Tape& t) {
      const Tensor& g = t.nodes_[id].grad;
      const Tensor& y = t.nodes_[id].val;
      t.accum(a, [&](Tensor& d) {
        for (size_t i = 0; i < g.numel(); ++i) d.v[i] -= g.v[i] * y.v[i] * y.v[i];
      });
    });
    return id;
  }

  // ---- matrix ops ----

  int matmul(int a, int b) {
    const Tensor& va = nodes_[a].val;
    const Tensor& vb = nodes_[b].val;
    if (va.cols() != vb.rows()) throw NumericError("matmul: inner dim mismatch");
    const size_t m = va.rows(), k = va.cols(), n = vb.cols();
    Tensor out(m, n);
    for (size_t i = 0; i < m; ++i) {
      const double* arow = va.v.data() + i * k;
      double* orow = out.v.data() + i * n;
      for (size_t p = 0; p < k; ++p) {
        const double av = arow[p];
        if (av == 0.0) continue;
        const double* brow = vb.v.data() + p * n;
        for (size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
    const int id = push(std::move(out), needs(a) || needs(b), nullptr);
    set_back(id, [id, a, b, m, k, n](Tape& t) {
      const Tensor& g = t.nodes_[id].grad;
      const Tensor& va2 = t.nodes_[a].val;
      const Tensor& vb2 = t.nodes_[b].val;
      t.accum(a, [&](Tensor& d) {  // dA += G * B^T
        for (size_t i = 0; i < m; ++i)
          for (size_t p = 0; p < k; ++p) {
            double s = 0.0;
            const double* grow = g.v.data() + i * n;
            const double* brow = vb2.v.data() + p * n;
            for (size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
            d.v[i * k + p] += s;
          }
      });
      t.accum(b, [&](Tensor& d) {  // dB += A^T * G
        for (size_t i = 0; i < m; ++i) {
          const double* arow = va2.v.data() + i * k;
          const double* grow = g.v.data() + i * n;
          for (size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* drow = d.v.data() + p * n;
            for (size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
          }
        }
      });
    });
    return id;
  }

  // ---- reductions ----

  int sum_all(int a) {
    double s = 0.0;
    for (double x : nodes_[a].val.v) s += x;
    const int id = push(Tensor::scalar(s), needs(a), nullptr);
    set_back(id, [id, a](Tape& t) {
      const double g = t.nodes_[id].grad.v[0];
      t.accum(a, [&](Tensor& d) {
        for (double& x : d.v) x += g;
      });
    });
    return id;
  }

  int abs_sum(int a) {
    double s = 0.0;
    for (double x : nodes_[a].val.v) s += std::abs(x);
    const int id = push(Tensor::scalar(s), needs(a), nullptr);
    set_back(id, [id, a](Tape& t) {
      const double g = t.nodes_[id].grad.v[0];
      const Tensor& va = t.nodes_[a].val;
      t.accum(a, [&](Tensor& d) {
        for (size_t i = 0; i < d.numel(); ++i)
          d.v[i] += g * (va.v[i] > 0.0 ? 1.0 : (va.v[i] < 0.0 ? -1.0 : 0.0));
      });
    });
    return id;
  }

  int mean_rows(int a) {  // [m,n] -> [1,n]
    const Tensor& va = nodes_[a].val;
    const size_t m = va.rows(), n = va.cols();
    Tensor out(1, n);
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) out.v[j] += va.at(i, j);
    for (double& x : out.v) x /= static_cast<double>(m);
    const int id = push(std::move(out), needs(a), nullptr);
    set_back(id, [id, a, m, n](Tape& t) {
      const Tensor& g = t.nodes_[id].grad;
      const double inv = 1.0 / static_cast<double>(m);
      t.accum(a, [&](Tensor& d) {
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < n; ++j) d.v[i * n + j] += g.v[j] * inv;
      });
    });
    return id;
  }

  int mean_cols(int a) {  // [m,n] -> [m,1]
    const Tensor& va = nodes_[a].val;
    const size_t m = va.rows(), n = va.cols();
    Tensor out(m, 1);
    for (size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (size_t j = 0; j < n; ++j) s += va.at(i, j);
      out.v[i] = s / static_cast<double>(n);
    }
    const int id = push(std::move(out), needs(a), nullptr);
    set_back(id, [id, a, m, n](Tape& t) {
      const Tensor& g = t.nodes_[id].grad;
      const double inv = 1.0 / static_cast<double>(n);
      t.accum(a, [&](Tensor& d) {
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < n; ++j) d.v[i * n + j] += g.v[i] * inv;
      });
    });
    return id;
  }

  // ---- broadcast ops: b is a [1,n] row vector or [m,1] column vector ----

  int add_rowvec(int a, int b) { return rowvec_op(a, b, +1); }
  int sub_rowvec(int a, int b) { return rowvec_op(a, b, -1); }

  int mul_rowvec(int a, int b) {
    const Tensor& va = nodes_[a].val;
    const Tensor& vb = nodes_[b].val;
    check_rowvec(va, vb, "mul_rowvec");
    const size_t m = va.rows(), n = va.cols();
    Tensor out = va;
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) out.v[i * n + j] *= vb.v[j];
    const int id = push(std::move(out), needs(a) || needs(b), nullptr);
    set_back(id, [id, a, b, m, n](Tape& t) {
      const Tensor& g = t.nodes_[id].grad;
      const Tensor& va2 = t.nodes_[a].val;
      const Tensor& vb2 = t.nodes_[b].val;
      t.accum(a, [&](Tensor& d) {
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < n; ++j) d.v[i * n + j] += g.v[i * n + j] * vb2.v[j];
      });
      t.accum(b, [&](Tensor& d) {
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < n; ++j) d.v[j] += g.v[i * n + j] * va2.v[i * n + j];
      });
    });
    return id;
  }

  int sub_colvec(int a, int b) {
    const Tensor& va = nodes_[a].val;
    const Tensor& vb = nodes_[b].val;
    check_colvec(va, vb, "sub_colvec");
    const size_t m = va.rows(), n = va.cols();
    Tensor out = va;
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) out.v[i * n + j] -= vb.v[i];
    const int id = push(std::move(out), needs(a) || needs(b), nullptr);
    set_back(id, [id, a, b, m, n](Tape& t) {
      const Tensor& g = t.nodes_[id].grad;
      t.accum(a, [&](Tensor& d) {
        for (size_t i = 0; i < g.numel(); ++i) d.v[i] += g.v[i];
      });
      t.accum(b, [&](Tensor& d) {
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < n; ++j) d.v[i] -= g.v[i * n + j];
      });
    });
    return id;
  }

  int mul_colvec(int a, int b) {
    const Tensor& va = nodes_[a].val;
    const Tensor& vb = nodes_[b].val;
    check_colvec(va, vb, "mul_colvec");
    const size_t m = va.rows(), n = va.cols();
    Tensor out = va;
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) out.v[i * n + j] *= vb.v[i];
    const int id = push(std::move(out), needs(a) || needs(b), nullptr);
    set_back(id, [id, a, b, m, n](Tape& t) {
      const Tensor& g = t.nodes_[id].grad;
      const Tensor& va2 = t.nodes_[a].val;
      const Tensor& vb2 = t.nodes_[b].val;
      t.accum(a, [&](Tensor& d) {
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < n; ++j) d.v[i * n + j] += g.v[i * n + j] * vb2.v[i];
      });
      t.accum(b, [&](Tensor& d) {
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < n; ++j) d.v[i] += g.v[i * n + j] * va2.v[i * n + j];
      });
    });
    return id;
  }

  int repeat_rows(int a, size_t m) {  // [1,n] -> [m,n]
    const Tensor& va = nodes_[a].val;
    if (va.rows() != 1) throw NumericError("repeat_rows: input must be [1,n]");
    const size_t n = va.cols();
    Tensor out(m, n);
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) out.v[i * n + j] = va.v[j];
    const int id = push(std::move(out), needs(a), nullptr);
    set_back(id, [id, a, m, n](Tape& t) {
      const Tensor& g = t.nodes_[id].grad;
      t.accum(a, [&](Tensor& d) {
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < n; ++j) d.v[j] += g.v[i * n + j];
      });
    });
    return id;
  }

  // ---- shape ops ----

  int concat_rows(const std::vector<int>& ids) {
    if (ids.empty()) throw NumericError("concat_rows: empty");
    const size_t n = nodes_[ids[0]].val.cols();
    size_t m = 0;
    bool ng = false;
    for (int a : ids) {
      if (nodes_[a].val.cols() != n) throw NumericError("concat_rows: col mismatch");
      m += nodes_[a].val.rows();
      ng = ng || needs(a);
    }
    Tensor out(m, n);
    size_t r = 0;
    for (int a : ids) {
      const Tensor& va = nodes_[a].val;
      std::copy(va.v.begin(), va.v.end(), out.v.begin() + r * n);
      r += va.rows();
    }
    const int id = push(std::move(out), ng, nullptr);
    std::vector<int> ids_copy = ids;
    set_back(id, [id, ids_copy, n](Tape& t) {
      const Tensor& g = t.nodes_[id].grad;
      size_t r = 0;
      for (int a : ids_copy) {
        const size_t ra = t.nodes_[a].val.rows();
        t.accum(a, [&](Tensor& d) {
          for (size_t i = 0; i < ra * n; ++i) d.v[i] += g.v[r * n + i];
        });
        r += ra;
      }
    });
    return id;
  }

  int slice_rows(int a, size_t r0, size_t r1) {
    const Tensor& va = nodes_[a].val;
    const size_t n = va.cols();
    if (r1 > va.rows() || r0 >= r1) throw NumericError("slice_rows: bad range");
    Tensor out(r1 - r0, n);
    std::copy(va.v.begin() + r0 * n, va.v.begin() + r1 * n, out.v.begin());
    const int id = push(std::move(out), needs(a), nullptr);
    set_back(id, [id, a, r0, r1, n](Tape& t) {
      const Tensor& g = t.nodes_[id].grad;
      t.accum(a, [&](Tensor& d) {
        for (size_t i = 0; i < (r1 - r0) * n; ++i) d.v[r0 * n + i] += g.v[i];
      });
    });
    return id;
  }

  int concat_cols(const std::vector<int>& ids) {
    if (ids.empty()) throw NumericError("concat_cols: empty");
    const size_t m = nodes_[ids[0]].val.rows();
    size_t n = 0;
    bool ng = false;
    for (int a : ids) {
      if (nodes_[a].val.rows() != m) throw NumericError("concat_cols: row mismatch");
      n += nodes_[a].val.cols();
      ng = ng || needs(a);
    }
    Tensor out(m, n);
    size_t c = 0;
    for (int a : ids) {
      const Tensor& va = nodes_[a].val;
      const size_t na = va.cols();
      for (size_t i = 0; i < m; ++i)
        std::copy(va.v.begin() + i * na, va.v.begin() + (i + 1) * na,
                  out.v.begin() + i * n + c);
      c += na;
    }
    const int id = push(std::move(out), ng, nullptr);
    std::vector<int> ids_copy = ids;
    set_back(id, [id, ids_copy, m, n](Tape& t) {
      const Tensor& g = t.nodes_[id].grad;
      size_t c = 0;
      for (int a : ids_copy) {
        const size_t na = t.nodes_[a].val.cols();
        t.accum(a, [&](Tensor& d) {
          for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < na; ++j) d.v[i * na + j] += g.v[i * n + c + j];
        });
        c += na;
      }
    });
    return id;
  }

  int slice_cols(int a, size_t c0, size_t c1) {
    const Tensor& va = nodes_[a].val;
    const size_t m = va.rows(), n = va.cols();
    if (c1 > n || c0 >= c1) throw NumericError("slice_cols: bad range");
    Tensor out(m, c1 - c0);
    for (size_t i = 0; i < m; ++i)
      std::copy(va.v.begin() + i * n + c0, va.v.begin() + i * n + c1,
                out.v.begin() + i * (c1 - c0));
    const int id = push(std::move(out), needs(a), nullptr);
    set_back(id, [id, a, c0, c1, m, n](Tape& t) {
      const Tensor& g = t.nodes_[id].grad;
      const size_t w = c1 - c0;
      t.accum(a, [&](Tensor& d) {
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < w; ++j) d.v[i * n + c0 + j] += g.v[i * w + j];
      });
    });
    return id;
  }

  // out row i = in row perm[i]; perm must be a bijection on rows.
  int permute_rows(int a, const std::vector<size_t>& perm) {
    const Tensor& va = nodes_[a].val;
    const size_t m = va.rows(), n = va.cols();
    if (perm.size() != m) throw NumericError("permute_rows: size mismatch");
    Tensor out(m, n);
    for (size_t i = 0; i < m; ++i)
      std::copy(va.v.begin() + perm[i] * n, va.v.begin() + (perm[i] + 1) * n,
                out.v.begin() + i * n);
    const int id = push(std::move(out), needs(a), nullptr);
    std::vector<size_t> perm_copy = perm;
    set_back(id, [id, a, perm_copy, n](Tape& t) {
      const Tensor& g = t.nodes_[id].grad;
      t.accum(a, [&](Tensor& d) {
        for (size_t i = 0; i < perm_copy.size(); ++i)
          for (size_t j = 0; j < n; ++j) d.v[perm_copy[i] * n + j] += g.v[i * n + j];
      });
    });
    return id;
  }

  // Accumulate into parent's gradient only if it participates in backprop.
  template <typename Fn>
  void accum(int parent, Fn&& fn) {
    if (!nodes_[parent].needs_grad) return;
    fn(grad_ref(parent));
  }

 private:
  int push(Tensor v, bool needs_grad, std::function<void(Tape&)> back) {
    nodes_.push_back(Node{std::move(v), Tensor(), needs_grad, std::move(back)});
    return static_cast<int>(nodes_.size() - 1);
  }

  bool needs(int a) const { return nodes_[a].needs_grad; }

  void check_same(int a, int b, const char* op) const {
    if (!nodes_[a].val.same_shape(nodes_[b].val))
      throw NumericError(std::string(op) + ": shape mismatch " +
                         nodes_[a].val.shape_str() + " vs " + nodes_[b].val.shape_str());
  }
  static void check_rowvec(const Tensor& a, const Tensor& b, const char* op) {
    if (b.rows() != 1 || b.cols() != a.cols())
      throw NumericError(std::string(op) + ": want [1," + std::to_string(a.cols()) + "]");
  }
  static void check_colvec(const Tensor& a, const Tensor& b, const char* op) {
    if (b.cols() != 1 || b.rows() != a.rows())
      throw NumericError(std::string(op) + ": want [" + std::to_string(a.rows()) + ",1]");
  }

  int rowvec_op(int a, int b, int sign) {
    const Tensor& va = nodes_[a].val;
    const Tensor& vb = nodes_[b].val;
    check_rowvec(va, vb, sign > 0 ? "add_rowvec" : "sub_rowvec");
    const size_t m = va.rows(), n = va.cols();
    Tensor out = va;
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) out.v[i * n + j] += sign * vb.v[j];
    const int id = push(std::move(out), needs(a) || needs(b), nullptr);
    set_back(id, [id, a, b, m, n, sign](Tape& t) {
      const Tensor& g = t.nodes_[id].grad;
      t.accum(a, [&](Tensor& d) {
        for (size_t i = 0; i < g.numel(); ++i) d.v[i] += g.v[i];
      });
      t.accum(b, [&](Tensor& d) {
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < n; ++j) d.v[j] += sign * g.v[i * n + j];
      });
    });
    return id;
  }

  std::vector<Node> nodes_;
};

}  // namespace rse

#endif  // RSE_AUTODIFF_HPP_
