#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "afford/tensor.hpp"

namespace afford {

using RowMatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatF = Eigen::Map<RowMatF>;
using MapConstMatF = Eigen::Map<const RowMatF>;

// Diagonal-Gaussian negative log likelihood, accumulated in double. This is
// the value the tape op stores (rounded to 32-bit).
inline double gaussian_nll_value(const float* target, const float* mean, const float* stddev,
                                 int n) {
  constexpr double kLog2Pi = 1.8378770664093454836;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double s = stddev[i];
    const double r = static_cast<double>(target[i]) - mean[i];
    acc += 0.5 * (kLog2Pi + 2.0 * std::log(s)) + r * r / (2.0 * s * s);
  }
  return acc;
}

// Record of one forward evaluation. Nodes are appended in topological order
// (parents always precede children); backward() replays them in reverse and
// accumulates adjoints for every node, including input leaves. One tape per
// evaluation; tapes are never shared between threads.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf referencing caller-owned storage (parameters or marked inputs).
  // The referenced tensor must outlive the tape.
  int leaf(const Tensor& external) {
    Node n;
    n.external = &external;
    nodes_.push_back(std::move(n));
    return last();
  }

  // Leaf owning a copy of the given values.
  int constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return last();
  }

  // y = x * W + b with x:[n], W:[n x m], b:[m].
  int dense(int x, int w, int b) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(b);
    require(wv.rank() == 2, "dense: weights must be rank 2, got " + Tensor::shape_str(wv.shape));
    const int n = wv.dim(0), m = wv.dim(1);
    require(xv.size() == n && bv.size() == m,
            "dense: input " + Tensor::shape_str(xv.shape) + " weights " +
                Tensor::shape_str(wv.shape) + " bias " + Tensor::shape_str(bv.shape));

    Tensor out = Tensor::zeros({m});
    MapConstMatF xm(xv.data.data(), 1, n);
    MapConstMatF wm(wv.data.data(), n, m);
    MapMatF om(out.data.data(), 1, m);
    om.noalias() = xm * wm;
    for (int j = 0; j < m; ++j) out.data[j] += bv.data[j];

    return push(std::move(out), [x, w, b, n, m](Tape& t, int self) {
      const Tensor& dy = t.grads_[self];
      const Tensor& xv = t.value(x);
      const Tensor& wv = t.value(w);
      MapConstMatF dym(dy.data.data(), 1, m);
      MapConstMatF xm(xv.data.data(), 1, n);
      MapConstMatF wm(wv.data.data(), n, m);
      MapMatF dxm(t.grads_[x].data.data(), 1, n);
      MapMatF dwm(t.grads_[w].data.data(), n, m);
      dxm.noalias() += dym * wm.transpose();
      dwm.noalias() += xm.transpose() * dym;
      for (int j = 0; j < m; ++j) t.grads_[b].data[j] += dy.data[j];
    });
  }

  // Stride-1 zero-padding-1 3x3 convolution, LeakyReLU, then 2x2 max-pool
  // with stride 2 and floor division of the spatial extents.
  // x:[H,W,Cin], k:[3,3,Cin,Cout], b:[Cout] -> [H/2, W/2, Cout].
  int conv3x3_pool(int x, int k, int b, float alpha) {
    const Tensor& xv = value(x);
    const Tensor& kv = value(k);
    const Tensor& bv = value(b);
    require(xv.rank() == 3, "conv3x3_pool: input must be rank 3, got " + Tensor::shape_str(xv.shape));
    require(kv.rank() == 4 && kv.dim(0) == 3 && kv.dim(1) == 3,
            "conv3x3_pool: kernels must be [3x3xCinxCout], got " + Tensor::shape_str(kv.shape));
    const int h = xv.dim(0), w = xv.dim(1), cin = xv.dim(2);
    const int cout = kv.dim(3);
    require(h >= 2 && w >= 2, "conv3x3_pool: spatial extent must be >= 2");
    require(kv.dim(2) == cin, "conv3x3_pool: input channels " + std::to_string(cin) +
                                  " vs kernel channels " + std::to_string(kv.dim(2)));
    require(bv.size() == cout, "conv3x3_pool: bias size " + std::to_string(bv.size()) +
                                   " vs output channels " + std::to_string(cout));

    ConvAux aux;
    aux.col = im2col(xv, h, w, cin);

    // act = leaky(col * K + bias), laid out as [H*W, Cout].
    Tensor act = Tensor::zeros({h * w, cout});
    {
      MapConstMatF colm(aux.col.data.data(), h * w, 9 * cin);
      MapConstMatF km(kv.data.data(), 9 * cin, cout);
      MapMatF am(act.data.data(), h * w, cout);
      am.noalias() = colm * km;
    }
    for (int p = 0; p < h * w; ++p)
      for (int c = 0; c < cout; ++c) {
        float& v = act.data[static_cast<std::size_t>(p) * cout + c];
        v += bv.data[c];
        if (v < 0.0f) v *= alpha;
      }

    const int ho = h / 2, wo = w / 2;
    Tensor out = Tensor::zeros({ho, wo, cout});
    aux.argmax.resize(static_cast<std::size_t>(ho) * wo * cout);
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox)
        for (int c = 0; c < cout; ++c) {
          int best = ((2 * oy) * w + 2 * ox) * cout + c;
          float bestv = act.data[best];
          const int cand[3] = {((2 * oy) * w + 2 * ox + 1) * cout + c,
                               ((2 * oy + 1) * w + 2 * ox) * cout + c,
                               ((2 * oy + 1) * w + 2 * ox + 1) * cout + c};
          for (int idx : cand)
            if (act.data[idx] > bestv) { best = idx; bestv = act.data[idx]; }
          out.data[(static_cast<std::size_t>(oy) * wo + ox) * cout + c] = bestv;
          aux.argmax[(static_cast<std::size_t>(oy) * wo + ox) * cout + c] = best;
        }
    aux.act = std::move(act);

    const int id = push(std::move(out), [x, k, b, h, w, cin, cout, alpha](Tape& t, int self) {
      const ConvAux& aux = t.nodes_[self].conv;
      const Tensor& dy = t.grads_[self];
      // Route pooled gradients back to the winning activation, then through
      // LeakyReLU: slope 1 where act >= 0 (act == 0 only at x == 0), alpha
      // where act < 0.
      Tensor dact = Tensor::zeros({h * w, cout});
      for (std::size_t i = 0; i < aux.argmax.size(); ++i) {
        const int src = aux.argmax[i];
        const float slope = aux.act.data[src] < 0.0f ? alpha : 1.0f;
        dact.data[src] += dy.data[i] * slope;
      }
      const Tensor& kv = t.value(k);
      MapConstMatF dam(dact.data.data(), h * w, cout);
      MapConstMatF colm(aux.col.data.data(), h * w, 9 * cin);
      MapConstMatF km(kv.data.data(), 9 * cin, cout);
      MapMatF dkm(t.grads_[k].data.data(), 9 * cin, cout);
      dkm.noalias() += colm.transpose() * dam;
      for (int c = 0; c < cout; ++c) {
        double s = 0.0;
        for (int p = 0; p < h * w; ++p) s += dact.data[static_cast<std::size_t>(p) * cout + c];
        t.grads_[b].data[c] += static_cast<float>(s);
      }
      Tensor dcol = Tensor::zeros({h * w, 9 * cin});
      MapMatF dcolm(dcol.data.data(), h * w, 9 * cin);
      dcolm.noalias() = dam * km.transpose();
      col2im_add(dcol, t.grads_[x], h, w, cin);
    });
    nodes_[id].conv = std::move(aux);
    return id;
  }

  // Elementwise x if x >= 0 else alpha * x.
  int leaky_relu(int x, float alpha) {
    const Tensor& xv = value(x);
    Tensor out = xv;
    for (float& v : out.data)
      if (v < 0.0f) v *= alpha;
    return push(std::move(out), [x, alpha](Tape& t, int self) {
      const Tensor& dy = t.grads_[self];
      const Tensor& xv = t.value(x);
      Tensor& dx = t.grads_[x];
      for (int i = 0; i < xv.size(); ++i)
        dx.data[i] += dy.data[i] * (xv.data[i] < 0.0f ? alpha : 1.0f);
    });
  }

  // Elementwise softplus log(1 + e^x); strictly positive, used to map raw
  // decoder outputs to standard deviations.
  int positive_std(int x) {
    const Tensor& xv = value(x);
    Tensor out = xv;
    for (float& v : out.data) {
      const double z = static_cast<double>(v);
      v = static_cast<float>(z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)));
    }
    return push(std::move(out), [x](Tape& t, int self) {
      const Tensor& dy = t.grads_[self];
      const Tensor& xv = t.value(x);
      Tensor& dx = t.grads_[x];
      for (int i = 0; i < xv.size(); ++i) {
        const double sig = 1.0 / (1.0 + std::exp(-static_cast<double>(xv.data[i])));
        dx.data[i] += dy.data[i] * static_cast<float>(sig);
      }
    });
  }

  int concat(std::span<const int> xs) {
    require(!xs.empty(), "concat: empty input list");
    int total = 0;
    for (int id : xs) total += value(id).size();
    Tensor out = Tensor::zeros({total});
    int off = 0;
    for (int id : xs) {
      const Tensor& v = value(id);
      std::copy(v.data.begin(), v.data.end(), out.data.begin() + off);
      off += v.size();
    }
    std::vector<int> parents(xs.begin(), xs.end());
    return push(std::move(out), [parents](Tape& t, int self) {
      const Tensor& dy = t.grads_[self];
      int off = 0;
      for (int id : parents) {
        Tensor& dx = t.grads_[id];
        for (int i = 0; i < dx.size(); ++i) dx.data[i] += dy.data[off + i];
        off += dx.size();
      }
    });
  }

  int slice(int x, int offset, int len) {
    const Tensor& xv = value(x);
    require(offset >= 0 && len >= 1 && offset + len <= xv.size(),
            "slice: [" + std::to_string(offset) + ", " + std::to_string(offset + len) +
                ") out of range for " + Tensor::shape_str(xv.shape));
    Tensor out = Tensor::zeros({len});
    std::copy(xv.data.begin() + offset, xv.data.begin() + offset + len, out.data.begin());
    return push(std::move(out), [x, offset, len](Tape& t, int self) {
      const Tensor& dy = t.grads_[self];
      Tensor& dx = t.grads_[x];
      for (int i = 0; i < len; ++i) dx.data[offset + i] += dy.data[i];
    });
  }

  // wa * a + wb * b with fixed scalar coefficients (not differentiated).
  int lincomb(float wa, int a, float wb, int b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    require(av.same_shape(bv), "lincomb: shape mismatch " + Tensor::shape_str(av.shape) + " vs " +
                                   Tensor::shape_str(bv.shape));
    Tensor out = Tensor::zeros(av.shape);
    for (int i = 0; i < av.size(); ++i) out.data[i] = wa * av.data[i] + wb * bv.data[i];
    return push(std::move(out), [wa, a, wb, b](Tape& t, int self) {
      const Tensor& dy = t.grads_[self];
      Tensor& da = t.grads_[a];
      Tensor& db = t.grads_[b];
      for (int i = 0; i < dy.size(); ++i) {
        da.data[i] += wa * dy.data[i];
        db.data[i] += wb * dy.data[i];
      }
    });
  }

  // Elementwise mean of the given nodes. Accumulates in double so the result
  // is independent of the input order for any realistic operand count.
  int mean_of(std::span<const int> xs) {
    require(!xs.empty(), "mean_of: empty input list");
    const Tensor& first = value(xs[0]);
    for (int id : xs)
      require(value(id).same_shape(first), "mean_of: shape mismatch " +
                                               Tensor::shape_str(value(id).shape) + " vs " +
                                               Tensor::shape_str(first.shape));
    Tensor out = Tensor::zeros(first.shape);
    const double inv = 1.0 / static_cast<double>(xs.size());
    for (int i = 0; i < first.size(); ++i) {
      double s = 0.0;
      for (int id : xs) s += static_cast<double>(value(id).data[i]);
      out.data[i] = static_cast<float>(s * inv);
    }
    std::vector<int> parents(xs.begin(), xs.end());
    return push(std::move(out), [parents](Tape& t, int self) {
      const Tensor& dy = t.grads_[self];
      const float inv = 1.0f / static_cast<float>(parents.size());
      for (int id : parents) {
        Tensor& dx = t.grads_[id];
        for (int i = 0; i < dy.size(); ++i) dx.data[i] += dy.data[i] * inv;
      }
    });
  }

  int add(int a, int b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    require(av.same_shape(bv), "add: shape mismatch " + Tensor::shape_str(av.shape) + " vs " +
                                   Tensor::shape_str(bv.shape));
    Tensor out = av;
    for (int i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
    return push(std::move(out), [a, b](Tape& t, int self) {
      const Tensor& dy = t.grads_[self];
      Tensor& da = t.grads_[a];
      Tensor& db = t.grads_[b];
      for (int i = 0; i < dy.size(); ++i) {
        da.data[i] += dy.data[i];
        db.data[i] += dy.data[i];
      }
    });
  }

  // Negative log likelihood of `target` under the diagonal Gaussian given by
  // (mean, std), summed over dimensions. std must be strictly positive.
  int gaussian_nll(int mean, int stddev, Tensor target) {
    const Tensor& mv = value(mean);
    const Tensor& sv = value(stddev);
    require(mv.same_shape(sv) && mv.size() == target.size(),
            "gaussian_nll: target " + Tensor::shape_str(target.shape) + " mean " +
                Tensor::shape_str(mv.shape) + " std " + Tensor::shape_str(sv.shape));
    for (int i = 0; i < sv.size(); ++i)
      require(sv.data[i] > 0.0f, "gaussian_nll: non-positive std at dim " + std::to_string(i));
    const double acc = gaussian_nll_value(target.data.data(), mv.data.data(), sv.data.data(), mv.size());
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    auto tgt = std::make_shared<Tensor>(std::move(target));
    return push(std::move(out), [mean, stddev, tgt](Tape& t, int self) {
      const float dy = t.grads_[self].data[0];
      const Tensor& mv = t.value(mean);
      const Tensor& sv = t.value(stddev);
      Tensor& dm = t.grads_[mean];
      Tensor& ds = t.grads_[stddev];
      for (int i = 0; i < mv.size(); ++i) {
        const double s = sv.data[i];
        const double r = static_cast<double>(mv.data[i]) - tgt->data[i];
        dm.data[i] += dy * static_cast<float>(r / (s * s));
        ds.data[i] += dy * static_cast<float>(1.0 / s - r * r / (s * s * s));
      }
    });
  }

  // Mean squared error against a fixed target.
  int mse(int pred, Tensor target) {
    const Tensor& pv = value(pred);
    require(pv.size() == target.size(), "mse: pred " + Tensor::shape_str(pv.shape) +
                                            " target " + Tensor::shape_str(target.shape));
    double acc = 0.0;
    for (int i = 0; i < pv.size(); ++i) {
      const double r = static_cast<double>(pv.data[i]) - target.data[i];
      acc += r * r;
    }
    Tensor out = Tensor::scalar(static_cast<float>(acc / pv.size()));
    auto tgt = std::make_shared<Tensor>(std::move(target));
    return push(std::move(out), [pred, tgt](Tape& t, int self) {
      const float dy = t.grads_[self].data[0];
      const Tensor& pv = t.value(pred);
      Tensor& dp = t.grads_[pred];
      const float inv = 2.0f / static_cast<float>(pv.size());
      for (int i = 0; i < pv.size(); ++i)
        dp.data[i] += dy * inv * (pv.data[i] - tgt->data[i]);
    });
  }

  const Tensor& value(int id) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(id));
    return n.external ? *n.external : n.value;
  }

  // Adjoint of a node; valid after backward().
  const Tensor& grad(int id) const {
    require(backward_done_, "grad: backward() has not been run");
    return grads_.at(static_cast<std::size_t>(id));
  }

  void backward(int loss) {
    require(loss >= 0 && loss < static_cast<int>(nodes_.size()), "backward: bad node id");
    require(value(loss).size() == 1,
            "backward: loss must be scalar, got " + Tensor::shape_str(value(loss).shape));
    grads_.clear();
    grads_.reserve(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) grads_.push_back(Tensor::zeros(value(static_cast<int>(i)).shape));
    grads_[static_cast<std::size_t>(loss)].data[0] = 1.0f;
    backward_done_ = true;
    for (int i = loss; i >= 0; --i)
      if (nodes_[static_cast<std::size_t>(i)].back) nodes_[static_cast<std::size_t>(i)].back(*this, i);
  }

  int node_count() const { return static_cast<int>(nodes_.size()); }

 private:
  struct ConvAux {
    Tensor col;                // [H*W, 9*Cin]
    Tensor act;                // post-LeakyReLU pre-pool, [H*W, Cout]
    std::vector<int> argmax;   // winning flat index per pooled output
  };

  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    std::function<void(Tape&, int)> back;
    ConvAux conv;
  };

  int push(Tensor value, std::function<void(Tape&, int)> back) {
    Node n;
    n.value = std::move(value);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return last();
  }

  int last() const { return static_cast<int>(nodes_.size()) - 1; }

  static Tensor im2col(const Tensor& x, int h, int w, int cin) {
    Tensor col = Tensor::zeros({h * w, 9 * cin});
    for (int y = 0; y < h; ++y)
      for (int ky = 0; ky < 3; ++ky) {
        const int sy = y + ky - 1;
        if (sy < 0 || sy >= h) continue;
        for (int xo = 0; xo < w; ++xo)
          for (int kx = 0; kx < 3; ++kx) {
            const int sx = xo + kx - 1;
            if (sx < 0 || sx >= w) continue;
            float* dst = &col.data[(static_cast<std::size_t>(y * w + xo) * 9 + (ky * 3 + kx)) * cin];
            const float* src = &x.data[static_cast<std::size_t>(sy * w + sx) * cin];
            std::copy(src, src + cin, dst);
          }
      }
    return col;
  }

  static void col2im_add(const Tensor& dcol, Tensor& dx, int h, int w, int cin) {
    for (int y = 0; y < h; ++y)
      for (int ky = 0; ky < 3; ++ky) {
        const int sy = y + ky - 1;
        if (sy < 0 || sy >= h) continue;
        for (int xo = 0; xo < w; ++xo)
          for (int kx = 0; kx < 3; ++kx) {
            const int sx = xo + kx - 1;
            if (sx < 0 || sx >= w) continue;
            const float* src = &dcol.data[(static_cast<std::size_t>(y * w + xo) * 9 + (ky * 3 + kx)) * cin];
            float* dst = &dx.data[static_cast<std::size_t>(sy * w + sx) * cin];
            for (int c = 0; c < cin; ++c) dst[c] += src[c];
          }
      }
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  bool backward_done_ = false;
};

}  // namespace afford
