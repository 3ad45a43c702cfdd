#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "certain/data.hpp"
#include "certain/mat.hpp"
#include "certain/util.hpp"

namespace certain::net {

struct NetConfig {
    int t = 48;
    int f = 8;
    int h = 16;
    int w = 16;
    int d_embed = 32;  // shared embedding width of both encoders
    int conv1 = 4;     // channels of the first image block
    int conv2 = 8;     // channels of the second image block
};

struct TensorSpec {
    std::string name;
    int offset = 0;
    std::vector<int> shape;
    int size() const {
        int s = 1;
        for (int d : shape) s *= d;
        return s;
    }
};

struct ForwardOutput {
    double logit = 0.0;
    double prob = 0.0;
    std::vector<double> emb_ehr;
    std::vector<double> emb_cxr;
};

// Everything backward() needs; filled by forward() when requested.
struct ForwardCache {
    Mat seq, img;
    std::vector<double> hs;              // (T+1) x D hidden states, h_0 first
    std::vector<double> rs, zs, ns, qs;  // T x D gate activations, q = r .* h_prev
    std::vector<double> t1;              // conv1 post-tanh, C1 x H1 x W1
    std::vector<double> t2;              // conv2 post-tanh, C2 x H2 x W2
    std::vector<double> emb_ehr, emb_cxr;
    double logit = 0.0, prob = 0.0;
};

// Bimodal fusion classifier: a single-cell GRU over the sequence with mean
// pooling, a two-block stride-2 convolutional image encoder with a final
// affine map, and an affine+sigmoid head on the concatenated embeddings.
// Parameters live in one flat vector; [0, head_offset) are the encoder
// parameters (theta_h) and [head_offset, param_count) the head (theta_L).
// The object itself is stateless apart from the shape registry, so one net
// serves any number of parameter vectors.
class FusionNet {
  public:
    explicit FusionNet(const NetConfig& cfg);

    const NetConfig& config() const { return cfg_; }
    int param_count() const { return n_params_; }
    int head_offset() const { return head_w_off_; }
    const std::vector<TensorSpec>& tensors() const { return tensors_; }

    // uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) per tensor, seeded
    std::vector<double> init_params(uint64_t seed) const;

    ForwardOutput forward(std::span<const double> params, const Mat& seq, const Mat& img,
                          ForwardCache* cache = nullptr) const;
    ForwardOutput forward(std::span<const double> params, const data::MultimodalSample& s,
                          ForwardCache* cache = nullptr) const {
        return forward(params, s.seq, s.img, cache);
    }

    // Accumulates exact gradients of a scalar loss into grad, given the
    // loss gradient at the logit and (optionally) at the two embeddings.
    // Empty spans stand for zero embedding gradients.
    void backward(std::span<const double> params, const ForwardCache& cache, double d_logit,
                  std::span<const double> d_emb_ehr, std::span<const double> d_emb_cxr,
                  std::span<double> grad) const;

  private:
    NetConfig cfg_;
    std::vector<TensorSpec> tensors_;
    int n_params_ = 0;
    int h1_ = 0, w1_ = 0, h2_ = 0, w2_ = 0, flat_ = 0;
    // tensor offsets, in registry order
    int wr_off_ = 0, ur_off_ = 0, br_off_ = 0;
    int wz_off_ = 0, uz_off_ = 0, bz_off_ = 0;
    int wn_off_ = 0, un_off_ = 0, bn_off_ = 0;
    int c1w_off_ = 0, c1b_off_ = 0, c2w_off_ = 0, c2b_off_ = 0;
    int fcw_off_ = 0, fcb_off_ = 0;
    int head_w_off_ = 0, head_b_off_ = 0;
};

// Checkpoint file: a single JSON header line (format tag, net shape, tensor
// table, block list, variational partition) followed by raw little-endian
// float64 blocks. Deterministic byte-for-byte for identical contents.
struct Checkpoint {
    NetConfig net;
    std::vector<double> mu;
    std::vector<double> log_var;  // empty for deterministic checkpoints
    std::string scope;            // "", "all", or "final_layer"
    int stoch_begin = 0;          // first parameter index covered by log_var
};

void save_checkpoint(const std::string& path, const FusionNet& net, std::span<const double> mu,
                     std::span<const double> log_var = {}, const std::string& scope = "",
                     int stoch_begin = 0);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace certain::net
