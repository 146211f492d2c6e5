#include "eet/autodiff.hpp"

#include <array>
#include <cmath>

namespace eet::ad {

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const Matrix& m = value();
  if (m.rows() != 1 || m.cols() != 1) throw Error("scalar() on a non-1x1 node");
  return m[0];
}

GradBuffer zero_grads_like(const ParamStore& store) {
  GradBuffer g;
  g.reserve(store.size());
  for (const auto& e : store.entries()) g.emplace_back(e.value.rows(), e.value.cols());
  return g;
}

Var Tape::constant(Matrix m) {
  Node n;
  n.value = std::move(m);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(const std::string& name) {
  if (!params_) throw Error("tape has no parameter store bound");
  if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return Var(this, it->second);
  const std::size_t idx = params_->index_of(name);
  Node n;
  n.value = params_->entry(idx).value;
  n.requires_grad = true;
  n.param_index = static_cast<std::ptrdiff_t>(idx);
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(name, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::push(Matrix value, std::span<const Var> parents, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (const Var& p : parents) {
    if (&p.tape() != this) throw Error("mixing nodes from different tapes");
    n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Matrix* Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return &n.grad;
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  Matrix* buf = grad_buffer(id);
  if (!buf) return;
  *buf += g;
}

void Tape::backward(Var loss, GradBuffer& grads) {
  const Matrix& lv = value(loss.id());
  if (lv.rows() != 1 || lv.cols() != 1) throw Error("backward requires a 1x1 loss");
  if (params_ && grads.size() != params_->size()) throw Error("gradient buffer size mismatch");
  for (auto& n : nodes_) n.grad = Matrix();
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad = Matrix(1, 1, 1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.param_index >= 0) {
      grads[static_cast<std::size_t>(n.param_index)] += n.grad;
    } else if (n.backward) {
      n.backward(*this, i);
    }
  }
}

void Tape::backward(Var loss, ParamStore& store) {
  GradBuffer g = zero_grads_like(store);
  backward(loss, g);
  for (std::size_t i = 0; i < store.size(); ++i) store.entry(i).grad += g[i];
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  const Var parents[] = {a, b};
  return t.push(kernels::omp::matmul(a.value(), b.value()), parents, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.accumulate(ia, kernels::omp::matmul_bt(g, tp.value(ib)));
    if (tp.requires_grad(ib)) tp.accumulate(ib, kernels::omp::matmul_at(tp.value(ia), g));
  });
}

Var matmul_bt(Var a, Var b) {
  Tape& t = a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  const Var parents[] = {a, b};
  return t.push(kernels::omp::matmul_bt(a.value(), b.value()), parents,
                [ia, ib](Tape& tp, std::size_t self) {
                  const Matrix& g = tp.grad(self);
                  if (tp.requires_grad(ia)) tp.accumulate(ia, kernels::omp::matmul(g, tp.value(ib)));
                  if (tp.requires_grad(ib)) tp.accumulate(ib, kernels::omp::matmul_at(g, tp.value(ia)));
                });
}

Var add(Var a, Var b) {
  if (!a.value().same_shape(b.value())) throw Error("add: shape mismatch");
  const std::size_t ia = a.id(), ib = b.id();
  const Var parents[] = {a, b};
  return a.tape().push(a.value() + b.value(), parents, [ia, ib](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.grad(self));
    tp.accumulate(ib, tp.grad(self));
  });
}

Var sub(Var a, Var b) {
  if (!a.value().same_shape(b.value())) throw Error("sub: shape mismatch");
  const std::size_t ia = a.id(), ib = b.id();
  const Var parents[] = {a, b};
  return a.tape().push(a.value() - b.value(), parents, [ia, ib](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.grad(self));
    if (tp.requires_grad(ib)) tp.accumulate(ib, tp.grad(self) * -1.0);
  });
}

Var mul(Var a, Var b) {
  if (!a.value().same_shape(b.value())) throw Error("mul: shape mismatch");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  const Var parents[] = {a, b};
  return a.tape().push(std::move(out), parents, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    if (Matrix* ga = tp.grad_buffer(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * tp.value(ib)[i];
    if (Matrix* gb = tp.grad_buffer(ib))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * tp.value(ia)[i];
  });
}

Var scale(Var a, double s) {
  const std::size_t ia = a.id();
  const Var parents[] = {a};
  return a.tape().push(a.value() * s, parents, [ia, s](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.grad(self) * s);
  });
}

Var add_row(Var x, Var bias) {
  const Matrix& xv = x.value();
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) throw Error("add_row: bias shape mismatch");
  Matrix out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv[c];
  const std::size_t ix = x.id(), ib = bias.id();
  const Var parents[] = {x, bias};
  return x.tape().push(std::move(out), parents, [ix, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    tp.accumulate(ix, g);
    if (Matrix* gb = tp.grad_buffer(ib))
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) (*gb)[c] += g(r, c);
  });
}

Var gelu(Var x) {
  const std::size_t ix = x.id();
  const Var parents[] = {x};
  return x.tape().push(eet::gelu(x.value()), parents, [ix](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    const Matrix& xv = tp.value(ix);
    Matrix* gx = tp.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * gelu_grad(xv[i]);
  });
}

Var softmax_rows(Var x) {
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto p = softmax(xv.row_span(r));
    std::copy(p.begin(), p.end(), out.row_span(r).begin());
  }
  const std::size_t ix = x.id();
  const Var parents[] = {x};
  return x.tape().push(std::move(out), parents, [ix](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    const Matrix& p = tp.value(self);
    Matrix* gx = tp.grad_buffer(ix);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < g.cols(); ++c) dot += g(r, c) * p(r, c);
      for (std::size_t c = 0; c < g.cols(); ++c) (*gx)(r, c) += p(r, c) * (g(r, c) - dot);
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw Error("concat_cols: row count mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < p.cols(); ++c) out(r, off + c) = p.value()(r, c);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.cols();
  }
  return parts[0].tape().push(std::move(out), parts, [ids, offsets](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Matrix* gp = tp.grad_buffer(ids[k]);
      if (!gp) continue;
      for (std::size_t r = 0; r < gp->rows(); ++r)
        for (std::size_t c = 0; c < gp->cols(); ++c) (*gp)(r, c) += g(r, offsets[k] + c);
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw Error("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw Error("concat_rows: column count mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    for (std::size_t r = 0; r < p.rows(); ++r)
      for (std::size_t c = 0; c < cols; ++c) out(off + r, c) = p.value()(r, c);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.rows();
  }
  return parts[0].tape().push(std::move(out), parts, [ids, offsets](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Matrix* gp = tp.grad_buffer(ids[k]);
      if (!gp) continue;
      for (std::size_t r = 0; r < gp->rows(); ++r)
        for (std::size_t c = 0; c < gp->cols(); ++c) (*gp)(r, c) += g(offsets[k] + r, c);
    }
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  const Matrix& xv = x.value();
  if (begin > end || end > xv.cols()) throw Error("slice_cols: range out of bounds");
  Matrix out(xv.rows(), end - begin);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = xv(r, c);
  const std::size_t ix = x.id();
  const Var parents[] = {x};
  return x.tape().push(std::move(out), parents, [ix, begin](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    Matrix* gx = tp.grad_buffer(ix);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) (*gx)(r, begin + c) += g(r, c);
  });
}

Var repeat_rows(Var row, std::size_t n) {
  const Matrix& v = row.value();
  if (v.rows() != 1) throw Error("repeat_rows: input must be a single row");
  Matrix out(n, v.cols());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < v.cols(); ++c) out(r, c) = v[c];
  const std::size_t ix = row.id();
  const Var parents[] = {row};
  return row.tape().push(std::move(out), parents, [ix](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    Matrix* gx = tp.grad_buffer(ix);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) (*gx)[c] += g(r, c);
  });
}

Var mean_rows(Var x) {
  const Matrix& xv = x.value();
  if (xv.rows() == 0) throw Error("mean_rows: no rows");
  Matrix out(1, xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < xv.cols(); ++c) out[c] += xv(r, c);
  const double inv = 1.0 / static_cast<double>(xv.rows());
  out *= inv;
  const std::size_t ix = x.id();
  const Var parents[] = {x};
  return x.tape().push(std::move(out), parents, [ix, inv](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    Matrix* gx = tp.grad_buffer(ix);
    for (std::size_t r = 0; r < gx->rows(); ++r)
      for (std::size_t c = 0; c < gx->cols(); ++c) (*gx)(r, c) += g[c] * inv;
  });
}

Var row_diff(Var x) {
  const Matrix& xv = x.value();
  if (xv.rows() < 2) throw Error("row_diff: need at least two rows");
  Matrix out(xv.rows() - 1, xv.cols());
  for (std::size_t r = 0; r + 1 < xv.rows(); ++r)
    for (std::size_t c = 0; c < xv.cols(); ++c) out(r, c) = xv(r + 1, c) - xv(r, c);
  const std::size_t ix = x.id();
  const Var parents[] = {x};
  return x.tape().push(std::move(out), parents, [ix](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    Matrix* gx = tp.grad_buffer(ix);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) {
        (*gx)(r + 1, c) += g(r, c);
        (*gx)(r, c) -= g(r, c);
      }
  });
}

Var scale_rows(Var x, std::span<const double> w) {
  const Matrix& xv = x.value();
  if (w.size() != xv.rows()) throw Error("scale_rows: weight count mismatch");
  Matrix out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) *= w[r];
  std::vector<double> weights(w.begin(), w.end());
  const std::size_t ix = x.id();
  const Var parents[] = {x};
  return x.tape().push(std::move(out), parents, [ix, weights](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    Matrix* gx = tp.grad_buffer(ix);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) (*gx)(r, c) += g(r, c) * weights[r];
  });
}

Var sum_squares(Var x) {
  const std::size_t ix = x.id();
  const Var parents[] = {x};
  return x.tape().push(Matrix(1, 1, frobenius_sq(x.value())), parents, [ix](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    tp.accumulate(ix, tp.value(ix) * (2.0 * g));
  });
}

Var cosine_distance(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (!av.same_shape(bv) || av.rows() != 1) throw Error("cosine_distance: expects equal row vectors");
  const double na = std::sqrt(frobenius_sq(av));
  const double nb = std::sqrt(frobenius_sq(bv));
  if (na < 1e-12 || nb < 1e-12) throw Error("undefined cosine");
  double dot = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) dot += av[i] * bv[i];
  const double cosv = dot / (na * nb);
  const std::size_t ia = a.id(), ib = b.id();
  const Var parents[] = {a, b};
  return a.tape().push(Matrix(1, 1, 1.0 - cosv), parents,
                       [ia, ib, na, nb, cosv](Tape& tp, std::size_t self) {
                         const double g = tp.grad(self)[0];
                         const Matrix& av = tp.value(ia);
                         const Matrix& bv = tp.value(ib);
                         // d cos / da = b/(|a||b|) − cos·a/|a|²
                         if (Matrix* ga = tp.grad_buffer(ia))
                           for (std::size_t i = 0; i < av.size(); ++i)
                             (*ga)[i] -= g * (bv[i] / (na * nb) - cosv * av[i] / (na * na));
                         if (Matrix* gb = tp.grad_buffer(ib))
                           for (std::size_t i = 0; i < bv.size(); ++i)
                             (*gb)[i] -= g * (av[i] / (na * nb) - cosv * bv[i] / (nb * nb));
                       });
}

Var vertex_normals(Var frames, std::span<const Face> faces) {
  std::vector<Face> face_list(faces.begin(), faces.end());
  Matrix out = kernels::omp::vertex_normals(frames.value(), face_list);
  const std::size_t ix = frames.id();
  const Var parents[] = {frames};
  return frames.tape().push(std::move(out), parents, [ix, face_list](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    const Matrix& x = tp.value(ix);
    const Matrix& n = tp.value(self);
    Matrix* gx = tp.grad_buffer(ix);
    const std::size_t v_count = x.cols() / 3;
    std::vector<double> acc(3 * v_count);
    std::vector<double> g_acc(3 * v_count);
    for (std::size_t t = 0; t < x.rows(); ++t) {
      auto p = x.row_span(t);
      std::fill(acc.begin(), acc.end(), 0.0);
      for (const Face& f : face_list) {
        const double* p0 = &p[3 * f[0]];
        const double* p1 = &p[3 * f[1]];
        const double* p2 = &p[3 * f[2]];
        const double e1[3] = {p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]};
        const double e2[3] = {p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]};
        const double c[3] = {e1[1] * e2[2] - e1[2] * e2[1], e1[2] * e2[0] - e1[0] * e2[2],
                             e1[0] * e2[1] - e1[1] * e2[0]};
        for (auto vi : f)
          for (int k = 0; k < 3; ++k) acc[3 * vi + k] += c[k];
      }
      // Through the normalization n = a/|a|: dL/da = (g − n(n·g))/|a|.
      for (std::size_t v = 0; v < v_count; ++v) {
        const double* a = &acc[3 * v];
        const double len = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
        double* ga = &g_acc[3 * v];
        if (len < 1e-12) {
          ga[0] = ga[1] = ga[2] = 0.0;
          continue;
        }
        const double gn[3] = {g(t, 3 * v), g(t, 3 * v + 1), g(t, 3 * v + 2)};
        const double nv[3] = {n(t, 3 * v), n(t, 3 * v + 1), n(t, 3 * v + 2)};
        const double dot = gn[0] * nv[0] + gn[1] * nv[1] + gn[2] * nv[2];
        for (int k = 0; k < 3; ++k) ga[k] = (gn[k] - nv[k] * dot) / len;
      }
      // Through c = e1 × e2: dL/de1 = e2 × gc, dL/de2 = gc × e1.
      for (const Face& f : face_list) {
        const double* p0 = &p[3 * f[0]];
        const double* p1 = &p[3 * f[1]];
        const double* p2 = &p[3 * f[2]];
        const double e1[3] = {p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]};
        const double e2[3] = {p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]};
        double gc[3] = {0.0, 0.0, 0.0};
        for (auto vi : f)
          for (int k = 0; k < 3; ++k) gc[k] += g_acc[3 * vi + k];
        const double ge1[3] = {e2[1] * gc[2] - e2[2] * gc[1], e2[2] * gc[0] - e2[0] * gc[2],
                               e2[0] * gc[1] - e2[1] * gc[0]};
        const double ge2[3] = {gc[1] * e1[2] - gc[2] * e1[1], gc[2] * e1[0] - gc[0] * e1[2],
                               gc[0] * e1[1] - gc[1] * e1[0]};
        for (int k = 0; k < 3; ++k) {
          (*gx)(t, 3 * f[0] + k) -= ge1[k] + ge2[k];
          (*gx)(t, 3 * f[1] + k) += ge1[k];
          (*gx)(t, 3 * f[2] + k) += ge2[k];
        }
      }
    }
  });
}

Var weighted_sum(std::span<const Var> terms, std::span<const double> weights) {
  if (terms.empty() || terms.size() != weights.size()) throw Error("weighted_sum: bad arguments");
  double total = 0.0;
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    total += weights[i] * terms[i].scalar();
    ids.push_back(terms[i].id());
  }
  std::vector<double> w(weights.begin(), weights.end());
  return terms[0].tape().push(Matrix(1, 1, total), terms, [ids, w](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    for (std::size_t i = 0; i < ids.size(); ++i) tp.accumulate(ids[i], Matrix(1, 1, g * w[i]));
  });
}

}  // namespace eet::ad
