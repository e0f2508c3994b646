#ifndef KSEG_NETWORK_HPP
#define KSEG_NETWORK_HPP

#include <string>
#include <vector>

#include "kseg/layers.hpp"

namespace kseg {

// Architecture hyperparameters. Feature width doubles per level with no cap;
// decoder levels 0..supervised_levels-1 carry segmentation heads (none at the
// bottleneck).
struct NetworkSpec {
  int levels = 5;
  int base_features = 30;
  int convs_per_level = 2;
  int num_classes = 3;
  int supervised_levels = 4;
  int in_channels = 1;

  int features(int level) const { return base_features << level; }
  int divisor() const { return 1 << (levels - 1); }

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (levels < 2) out.push_back("network.levels must be >= 2");
    if (base_features < 1) out.push_back("network.base_features must be >= 1");
    if (convs_per_level < 1) out.push_back("network.convs_per_level must be >= 1");
    if (num_classes < 2) out.push_back("network.num_classes must be >= 2");
    if (supervised_levels < 1 || supervised_levels > levels - 1)
      out.push_back("network.supervised_levels must be in [1, levels-1]");
    if (in_channels < 1) out.push_back("network.in_channels must be >= 1");
    return out;
  }
  void validate() const {
    const auto p = problems();
    if (!p.empty()) throw std::invalid_argument("invalid NetworkSpec: " + p.front());
  }

  bool operator==(const NetworkSpec&) const = default;
};

inline void check_patch_divisible(const std::array<int, 3>& patch, const NetworkSpec& spec) {
  const int d = spec.divisor();
  for (int a = 0; a < 3; ++a) {
    if (patch[a] <= 0 || patch[a] % d != 0)
      throw std::invalid_argument("patch dim " + std::to_string(patch[a]) +
                                  " not divisible by 2^(levels-1) = " + std::to_string(d));
  }
}

template <class Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  Tensor<Scalar> out(a.n, a.c + b.c, a.x, a.y, a.z);
  const std::size_t va = a.c * a.voxels(), vb = b.c * b.voxels();
  for (int n = 0; n < a.n; ++n) {
    std::copy(a.sample(n), a.sample(n) + va, out.sample(n));
    std::copy(b.sample(n), b.sample(n) + vb, out.sample(n) + va);
  }
  return out;
}

// Encoder-decoder with strided-convolution downsampling, transposed-convolution
// upsampling, skip connections, and a 1x1x1 head at each supervised decoder
// resolution. Forward in training mode records everything backward() needs.
template <class Scalar>
class MsUNet {
 public:
  static constexpr Scalar kLeakySlope = Scalar(0.01);

  struct Block {
    Conv3<Scalar> conv;
    InstanceNorm<Scalar> norm;
  };

  struct Trace {
    Tensor<Scalar> input;
    std::vector<std::vector<Tensor<Scalar>>> enc_out;
    std::vector<std::vector<NormCache<Scalar>>> enc_norm;
    std::vector<Tensor<Scalar>> cat;
    std::vector<std::vector<Tensor<Scalar>>> dec_out;
    std::vector<std::vector<NormCache<Scalar>>> dec_norm;
  };

  MsUNet() = default;

  void build(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    spec_ = spec;
    Rng rng(derive_seed(seed, 0x6e657477 /* "netw" */));
    const int L = spec.levels;
    enc_.assign(L, {});
    for (int l = 0; l < L; ++l) {
      enc_[l].resize(spec.convs_per_level);
      for (int b = 0; b < spec.convs_per_level; ++b) {
        const int cin = b > 0 ? spec.features(l)
                              : (l == 0 ? spec.in_channels : spec.features(l - 1));
        const int stride = (b == 0 && l > 0) ? 2 : 1;
        enc_[l][b].conv.init(cin, spec.features(l), stride, rng);
        enc_[l][b].norm.init(spec.features(l));
      }
    }
    up_.resize(L - 1);
    dec_.assign(L - 1, {});
    for (int l = L - 2; l >= 0; --l) {
      up_[l].init(spec.features(l + 1), spec.features(l), rng);
      dec_[l].resize(spec.convs_per_level);
      for (int b = 0; b < spec.convs_per_level; ++b) {
        const int cin = b == 0 ? 2 * spec.features(l) : spec.features(l);
        dec_[l][b].conv.init(cin, spec.features(l), 1, rng);
        dec_[l][b].norm.init(spec.features(l));
      }
    }
    heads_.resize(spec.supervised_levels);
    for (int s = 0; s < spec.supervised_levels; ++s)
      heads_[s].init(spec.features(s), spec.num_classes, rng);
  }

  const NetworkSpec& spec() const { return spec_; }

  // Returns one logits tensor per supervised level, full resolution first.
  // Without a trace, intermediates are released as soon as they are consumed.
  std::vector<Tensor<Scalar>> forward(const Tensor<Scalar>& in, Trace* trace,
                                      Workspace<Scalar>& ws) const {
    check_patch_divisible({in.x, in.y, in.z}, spec_);
    if (in.c != spec_.in_channels)
      throw std::invalid_argument("forward: wrong input channel count");
    const int L = spec_.levels;
    const int B = spec_.convs_per_level;
    if (trace) {
      trace->input = in;
      trace->enc_out.assign(L, {});
      trace->enc_norm.assign(L, {});
      trace->cat.assign(L - 1, {});
      trace->dec_out.assign(L - 1, {});
      trace->dec_norm.assign(L - 1, {});
    }

    auto run_block = [&](const Block& blk, const Tensor<Scalar>& bin, Tensor<Scalar>& bout,
                         NormCache<Scalar>* cache) {
      conv3_forward(blk.conv, bin, bout, ws);
      instnorm_forward(blk.norm, bout, cache);
      leaky_relu_forward(bout, kLeakySlope);
    };

    std::vector<Tensor<Scalar>> skip(L);  // only used without a trace
    Tensor<Scalar> cur;
    for (int l = 0; l < L; ++l) {
      for (int b = 0; b < B; ++b) {
        const Tensor<Scalar>& bin =
            b > 0 ? cur
                  : (l == 0 ? in : (trace ? trace->enc_out[l - 1].back() : skip[l - 1]));
        Tensor<Scalar> out;
        NormCache<Scalar> cache;
        run_block(enc_[l][b], bin, out, trace ? &cache : nullptr);
        cur = std::move(out);
        if (trace) {
          trace->enc_out[l].push_back(std::move(cur));
          trace->enc_norm[l].push_back(std::move(cache));
          if (b == B - 1 && l < L - 1) cur = Tensor<Scalar>();
          else cur = trace->enc_out[l].back();
        }
      }
      if (!trace && l < L - 1) skip[l] = std::move(cur);
    }
    // cur now holds the bottleneck output (a copy when tracing; the decoder
    // below reads stage inputs from the trace instead).

    std::vector<Tensor<Scalar>> logits(spec_.supervised_levels);
    for (int l = L - 2; l >= 0; --l) {
      const Tensor<Scalar>& up_in =
          trace ? (l == L - 2 ? trace->enc_out[L - 1].back() : trace->dec_out[l + 1].back())
                : cur;
      Tensor<Scalar> u;
      upconv2_forward(up_[l], up_in, u, ws);
      cur = Tensor<Scalar>();
      const Tensor<Scalar>& sk = trace ? trace->enc_out[l].back() : skip[l];
      Tensor<Scalar> cat = concat_channels(u, sk);
      u = Tensor<Scalar>();
      if (!trace) skip[l] = Tensor<Scalar>();
      if (trace) trace->cat[l] = std::move(cat);
      for (int b = 0; b < B; ++b) {
        const Tensor<Scalar>& bin = b > 0 ? cur : (trace ? trace->cat[l] : cat);
        Tensor<Scalar> out;
        NormCache<Scalar> cache;
        run_block(dec_[l][b], bin, out, trace ? &cache : nullptr);
        if (b == 0) cat = Tensor<Scalar>();
        cur = std::move(out);
        if (trace) {
          trace->dec_out[l].push_back(std::move(cur));
          trace->dec_norm[l].push_back(std::move(cache));
          cur = trace->dec_out[l].back();
        }
      }
      if (l < spec_.supervised_levels) conv1_forward(heads_[l], cur, logits[l]);
    }
    return logits;
  }

  // Convenience: full-resolution logits only, no trace.
  Tensor<Scalar> forward_infer(const Tensor<Scalar>& in, Workspace<Scalar>& ws) const {
    return forward(in, nullptr, ws).front();
  }

  // Accumulates parameter gradients for d(loss)/d(logits). Zero grads first
  // (or don't, to accumulate across micro-batches).
  void backward(const Trace& trace, const std::vector<Tensor<Scalar>>& dlogits,
                Workspace<Scalar>& ws) {
    const int L = spec_.levels;
    const int B = spec_.convs_per_level;
    if (int(dlogits.size()) != spec_.supervised_levels)
      throw std::invalid_argument("backward: wrong number of logit gradients");

    // Gradients w.r.t. each decoder stage output, seeded by the heads.
    std::vector<Tensor<Scalar>> dd(L - 1);
    for (int s = 0; s < spec_.supervised_levels; ++s)
      conv1_backward(heads_[s], trace.dec_out[s].back(), dlogits[s], &dd[s]);

    std::vector<Tensor<Scalar>> dskip(L - 1);
    Tensor<Scalar> denc_top;
    for (int l = 0; l <= L - 2; ++l) {
      Tensor<Scalar> g = std::move(dd[l]);
      if (g.size() == 0) {
        const auto& ref = trace.dec_out[l].back();
        g = Tensor<Scalar>(ref.n, ref.c, ref.x, ref.y, ref.z);
      }
      for (int b = B - 1; b >= 0; --b) {
        leaky_relu_backward(trace.dec_out[l][b], g, kLeakySlope);
        instnorm_backward(dec_[l][b].norm, trace.dec_norm[l][b], g);
        const Tensor<Scalar>& block_in = b == 0 ? trace.cat[l] : trace.dec_out[l][b - 1];
        Tensor<Scalar> gin;
        conv3_backward(dec_[l][b].conv, block_in, g, &gin, ws);
        g = std::move(gin);
      }
      // Split the concat gradient: first F_l channels drive the upconv,
      // the rest belong to the skip connection.
      const int f = spec_.features(l);
      Tensor<Scalar> du(g.n, f, g.x, g.y, g.z);
      dskip[l] = Tensor<Scalar>(g.n, f, g.x, g.y, g.z);
      for (int n = 0; n < g.n; ++n) {
        const std::size_t half = std::size_t(f) * g.voxels();
        std::copy(g.sample(n), g.sample(n) + half, du.sample(n));
        std::copy(g.sample(n) + half, g.sample(n) + 2 * half, dskip[l].sample(n));
      }
      const Tensor<Scalar>& up_in =
          l == L - 2 ? trace.enc_out[L - 1].back() : trace.dec_out[l + 1].back();
      Tensor<Scalar> dup_in;
      upconv2_backward(up_[l], up_in, du, &dup_in, ws);
      if (l == L - 2) {
        denc_top = std::move(dup_in);
      } else {
        if (dd[l + 1].size() == 0) {
          dd[l + 1] = std::move(dup_in);
        } else {
          dd[l + 1].array() += dup_in.array();
        }
      }
    }

    Tensor<Scalar> dnext = std::move(denc_top);
    for (int l = L - 1; l >= 0; --l) {
      Tensor<Scalar> g;
      if (l == L - 1) {
        g = std::move(dnext);
      } else {
        g = std::move(dskip[l]);
        g.array() += dnext.array();
      }
      for (int b = B - 1; b >= 0; --b) {
        leaky_relu_backward(trace.enc_out[l][b], g, kLeakySlope);
        instnorm_backward(enc_[l][b].norm, trace.enc_norm[l][b], g);
        const Tensor<Scalar>& block_in =
            b > 0 ? trace.enc_out[l][b - 1]
                  : (l == 0 ? trace.input : trace.enc_out[l - 1].back());
        const bool need_din = !(l == 0 && b == 0);
        Tensor<Scalar> gin;
        conv3_backward(enc_[l][b].conv, block_in, g, need_din ? &gin : nullptr, ws);
        g = std::move(gin);
      }
      dnext = std::move(g);
    }
  }

  std::vector<ParamRef<Scalar>> parameters() {
    std::vector<ParamRef<Scalar>> out;
    auto add = [&out](const std::string& name, auto& m, auto& g) {
      out.push_back({name, m.data(), g.data(), std::size_t(m.size())});
    };
    for (int l = 0; l < int(enc_.size()); ++l)
      for (int b = 0; b < int(enc_[l].size()); ++b) {
        auto tag = "enc" + std::to_string(l) + "." + std::to_string(b);
        add(tag + ".conv.w", enc_[l][b].conv.W, enc_[l][b].conv.gW);
        add(tag + ".conv.b", enc_[l][b].conv.b, enc_[l][b].conv.gb);
        add(tag + ".norm.gamma", enc_[l][b].norm.gamma, enc_[l][b].norm.ggamma);
        add(tag + ".norm.beta", enc_[l][b].norm.beta, enc_[l][b].norm.gbeta);
      }
    for (int l = 0; l < int(up_.size()); ++l) {
      auto tag = "up" + std::to_string(l);
      add(tag + ".w", up_[l].W, up_[l].gW);
      add(tag + ".b", up_[l].b, up_[l].gb);
    }
    for (int l = 0; l < int(dec_.size()); ++l)
      for (int b = 0; b < int(dec_[l].size()); ++b) {
        auto tag = "dec" + std::to_string(l) + "." + std::to_string(b);
        add(tag + ".conv.w", dec_[l][b].conv.W, dec_[l][b].conv.gW);
        add(tag + ".conv.b", dec_[l][b].conv.b, dec_[l][b].conv.gb);
        add(tag + ".norm.gamma", dec_[l][b].norm.gamma, dec_[l][b].norm.ggamma);
        add(tag + ".norm.beta", dec_[l][b].norm.beta, dec_[l][b].norm.gbeta);
      }
    for (int s = 0; s < int(heads_.size()); ++s) {
      auto tag = "head" + std::to_string(s);
      add(tag + ".w", heads_[s].W, heads_[s].gW);
      add(tag + ".b", heads_[s].b, heads_[s].gb);
    }
    return out;
  }

  void zero_grads() {
    for (auto& p : parameters()) std::fill(p.grad, p.grad + p.count, Scalar(0));
  }

  std::size_t param_count() {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.count;
    return n;
  }

 private:
  NetworkSpec spec_;
  std::vector<std::vector<Block>> enc_;
  std::vector<UpConv2<Scalar>> up_;
  std::vector<std::vector<Block>> dec_;
  std::vector<Conv1<Scalar>> heads_;
};

}  // namespace kseg

#endif  // KSEG_NETWORK_HPP
