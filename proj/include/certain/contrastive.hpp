#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "certain/data.hpp"
#include "certain/mat.hpp"
#include "certain/net.hpp"

namespace certain::contrastive {

// Per-sample latent representations in the shared contrastive space; rows of
// phi_* are unit vectors (or all-zero for degenerate inputs).
struct EmbeddingSet {
    std::vector<std::string> ids;
    Mat phi_ehr;  // n x d_proj
    Mat phi_cxr;  // n x d_proj
};

// Both encoders of a FusionNet plus one affine+L2-normalize projection head
// per modality. The head parameters of the underlying net are unused here.
struct ConvirtModel {
    net::NetConfig net_cfg;
    int d_proj = 16;
    std::vector<double> enc_params;   // full FusionNet parameter vector
    std::vector<double> proj_params;  // [P_ehr d_p x d_e | b_ehr d_p | P_cxr | b_cxr]
};

// Bidirectional infoNCE building block: mean over rows i of
// -log softmax_j(<z_a_i, z_b_j>/temperature) at j = i. Rows must be
// unit-norm (checked loosely); temperature must be positive.
double info_nce(const Mat& z_a, const Mat& z_b, double temperature);

// Same value, also accumulating d(loss)/dz into the optional outputs.
double info_nce_with_grad(const Mat& z_a, const Mat& z_b, double temperature, Mat* dz_a,
                          Mat* dz_b);

struct PretrainConfig {
    int d_proj = 16;
    double temperature = 0.1;
    int batch_size = 64;
    int epochs = 30;
    double lr = 0.02;       // used when lr_trials == 1
    int lr_trials = 1;      // > 1: log-uniform random search over [lr_lo, lr_hi]
    double lr_lo = 1e-2;
    double lr_hi = 1e-1;
    uint64_t seed = 1;
    int threads = 1;
};

struct PretrainResult {
    ConvirtModel model;
    double best_val_retrieval = 0.0;
    double chosen_lr = 0.0;
    std::vector<double> loss_history;  // per epoch, winning trial
};

// Self-supervised pretraining of the two encoders with the bidirectional
// infoNCE objective; checkpoint selection by top-1 cross-modal retrieval
// accuracy on the validation pairs. Aborts with numeric_error if the loss
// turns non-finite.
PretrainResult pretrain(const std::vector<data::MultimodalSample>& train,
                        const std::vector<data::MultimodalSample>& val, const net::NetConfig& ncfg,
                        const PretrainConfig& cfg);

EmbeddingSet embed(const ConvirtModel& model, const std::vector<data::MultimodalSample>& samples,
                   int threads = 1);

// Mean of the two directional top-1 retrieval accuracies over aligned pairs.
double retrieval_accuracy(const EmbeddingSet& emb);

// JSONL dump: {"id":..., "phi_ehr":[...], "phi_cxr":[...]}
void save_embeddings(const EmbeddingSet& emb, const std::string& path);
EmbeddingSet load_embeddings(const std::string& path);

void save_convirt(const ConvirtModel& model, const std::string& path);
ConvirtModel load_convirt(const std::string& path);

}  // namespace certain::contrastive
