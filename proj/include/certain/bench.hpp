#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "certain/contextset.hpp"
#include "certain/contrastive.hpp"
#include "certain/data.hpp"
#include "certain/evaluate.hpp"
#include "certain/net.hpp"
#include "certain/objective.hpp"

namespace certain::bench {

// End-to-end synthetic benchmark shared by `certain ablate` and the
// acceptance suite: one dataset, one contrastive pretraining, per-seed
// deterministic warm starts, then per-strategy stochastic fine-tuning,
// evaluated on a clean/shifted test mixture.
struct BenchConfig {
    data::DatasetManifest manifest;
    net::NetConfig net;
    contrastive::PretrainConfig pretrain;
    obj::TrainConfig det;    // deterministic warm-start hyperparameters
    obj::TrainConfig stoch;  // shared stochastic hyperparameters
    double mix_fraction = 0.5;
    uint64_t mix_seed = 9001;
    int j_eval = 32;
    std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
    double v = 1.5;
    double c_thresh = 1.5;
    double hem_fraction = 0.2;
    corrupt::Params corruption;
    int threads = 1;
};

BenchConfig default_bench();

struct SeedMetrics {
    uint64_t seed = 0;
    double auroc = 0.0, auprc = 0.0;
    double sel_auroc = 0.0, sel_auprc = 0.0;
};

struct StrategyResult {
    std::string name;
    std::vector<SeedMetrics> per_seed;
    double auroc_mean = 0.0, auroc_se = 0.0;
    double auprc_mean = 0.0, auprc_se = 0.0;
    double sel_auroc_mean = 0.0, sel_auroc_se = 0.0;
    double sel_auprc_mean = 0.0, sel_auprc_se = 0.0;
};

// Shared artifacts, built once and reused across strategies and seeds.
struct BenchContext {
    net::FusionNet fnet;
    data::Dataset ds;
    contrastive::ConvirtModel convirt;
    contrastive::EmbeddingSet embeddings;               // of the training split
    std::map<uint64_t, obj::TrainResult> warmstarts;    // per training seed
    std::vector<data::MultimodalSample> eval_set;       // clean/shifted mixture
    std::map<std::string, ctx::ContextSet> context_cache;  // keyed by strategy[:seed]

    explicit BenchContext(const net::NetConfig& cfg) : fnet(cfg) {}
};

BenchContext prepare(const BenchConfig& cfg);

// Strategy names: deterministic, uninformative, corruptions, inter,
// inter_intra, medcertain_I, medcertain_II, hem, hem_finetune.
SeedMetrics run_strategy(const BenchConfig& cfg, BenchContext& bc, const std::string& strategy,
                         uint64_t seed);

StrategyResult run_strategy_all_seeds(const BenchConfig& cfg, BenchContext& bc,
                                      const std::string& strategy);

std::vector<StrategyResult> run_ablation(const BenchConfig& cfg, BenchContext& bc,
                                         const std::vector<std::string>& strategies);

// Table 2-shaped comparison table (mean +/- standard error per metric).
void write_ablation_csv(const std::vector<StrategyResult>& rows, const std::string& path);
void write_ablation_json(const std::vector<StrategyResult>& rows, const std::string& path);

}  // namespace certain::bench
