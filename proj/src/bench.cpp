#include "certain/bench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "certain/rng.hpp"
#include "certain/tune.hpp"
#include "certain/util.hpp"

namespace certain::bench {

BenchConfig default_bench() {
    BenchConfig cfg;
    cfg.manifest.seed = 424242;
    cfg.manifest.n_train = 1000;
    cfg.manifest.n_val = 200;
    cfg.manifest.n_test = 400;
    cfg.manifest.mismatch_rate = 0.3;

    cfg.net.t = cfg.manifest.dims.t;
    cfg.net.f = cfg.manifest.dims.f;
    cfg.net.h = cfg.manifest.dims.h;
    cfg.net.w = cfg.manifest.dims.w;

    cfg.pretrain.seed = 515151;
    cfg.pretrain.epochs = 12;
    cfg.pretrain.lr = 0.01;
    cfg.pretrain.lr_trials = 1;

    cfg.det.mode = "deterministic";
    cfg.det.lr = 3e-3;
    cfg.det.epochs = 16;
    cfg.det.kl_scale = 0.0;

    cfg.stoch.mode = "stochastic";
    cfg.stoch.lr = 3e-3;
    cfg.stoch.epochs = 10;
    cfg.stoch.kl_scale = 1.0;
    cfg.stoch.tau = 0.1;
    cfg.stoch.s1 = 0.01;
    cfg.stoch.s2 = 5.0;
    cfg.stoch.prior_variance = 1.0;
    cfg.stoch.context_batch_size = 16;
    return cfg;
}

BenchContext prepare(const BenchConfig& cfg) {
    BenchContext bc(cfg.net);
    bc.ds = data::generate(cfg.manifest);

    auto pre = contrastive::pretrain(bc.ds.train, bc.ds.val, cfg.net, cfg.pretrain);
    bc.convirt = pre.model;
    bc.embeddings = contrastive::embed(bc.convirt, bc.ds.train, cfg.threads);

    for (uint64_t seed : cfg.seeds) {
        obj::TrainConfig det = cfg.det;
        det.seed = seed;
        det.threads = cfg.threads;
        bc.warmstarts.emplace(seed, obj::train(bc.fnet, bc.ds.train, bc.ds.val, nullptr, {}, det));
    }

    bc.eval_set = data::mix_shifted(bc.ds.test, bc.ds.test_shifted, cfg.mix_fraction, cfg.mix_seed);
    return bc;
}

namespace {

const ctx::ContextSet& strategy_context(const BenchConfig& cfg, BenchContext& bc,
                                        const std::string& strategy, uint64_t seed) {
    std::string key = strategy;
    if (strategy == "hem") key += ":" + std::to_string(seed);  // depends on the seed's warm start
    auto it = bc.context_cache.find(key);
    if (it != bc.context_cache.end()) return it->second;

    ctx::BuildInputs in;
    in.train = &bc.ds.train;
    in.embeddings = &bc.embeddings;
    in.corruption = cfg.corruption;
    in.v = cfg.v;
    in.c_thresh = cfg.c_thresh;
    in.hem_fraction = cfg.hem_fraction;
    in.seed = cfg.manifest.seed;
    in.threads = cfg.threads;
    if (strategy == "hem") {
        in.fnet = &bc.fnet;
        in.model_params = bc.warmstarts.at(seed).params;
    }
    auto [pos, inserted] = bc.context_cache.emplace(key, ctx::build(strategy, in));
    (void)inserted;
    return pos->second;
}

SeedMetrics evaluate_params(const BenchConfig& cfg, BenchContext& bc,
                            std::span<const double> params, const var::VarState* vs,
                            uint64_t seed) {
    auto preds = eval::predict(bc.fnet, params, vs, bc.eval_set, cfg.j_eval,
                               derive_seed(seed, hash_str("bench_eval")), cfg.threads);
    std::vector<int> labels(bc.eval_set.size());
    for (size_t i = 0; i < labels.size(); ++i) labels[i] = bc.eval_set[i].label;
    auto sweep = eval::selective_sweep(preds, labels);
    SeedMetrics m;
    m.seed = seed;
    m.auroc = sweep.full_auroc.value_or(0.0);
    m.auprc = sweep.full_auprc.value_or(0.0);
    m.sel_auroc = sweep.selective_auroc.value_or(0.0);
    m.sel_auprc = sweep.selective_auprc.value_or(0.0);
    return m;
}

var::VarState state_from_result(const net::FusionNet& fnet, const obj::TrainResult& tr) {
    var::VarState st = var::make_state(fnet, tr.params, tr.scope.empty() ? "all" : tr.scope);
    st.log_var = tr.log_var;
    return st;
}

}  // namespace

SeedMetrics run_strategy(const BenchConfig& cfg, BenchContext& bc, const std::string& strategy,
                         uint64_t seed) {
    const auto& warm = bc.warmstarts.at(seed);

    if (strategy == "deterministic")
        return evaluate_params(cfg, bc, warm.params, nullptr, seed);

    if (strategy == "hem_finetune") {
        // HEM as fine-tuning data: continue deterministic training on the
        // top-loss subset, labels kept.
        std::vector<int> order(bc.ds.train.size());
        std::iota(order.begin(), order.end(), 0);
        std::vector<double> loss(bc.ds.train.size());
        parallel_for(static_cast<int>(bc.ds.train.size()), cfg.threads, [&](int i) {
            const auto& s = bc.ds.train[static_cast<size_t>(i)];
            double p = bc.fnet.forward(warm.params, s).prob;
            p = std::min(std::max(p, 1e-12), 1.0 - 1e-12);
            loss[static_cast<size_t>(i)] =
                -(s.label * std::log(p) + (1.0 - s.label) * std::log(1.0 - p));
        });
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return loss[static_cast<size_t>(a)] > loss[static_cast<size_t>(b)];
        });
        int take = static_cast<int>(std::ceil(cfg.hem_fraction * static_cast<double>(bc.ds.train.size())));
        std::vector<data::MultimodalSample> hard;
        for (int k = 0; k < take; ++k) hard.push_back(bc.ds.train[static_cast<size_t>(order[static_cast<size_t>(k)])]);
        obj::TrainConfig det = cfg.det;
        det.seed = derive_seed(seed, hash_str("hem_finetune"));
        det.threads = cfg.threads;
        auto tuned = obj::train(bc.fnet, hard, bc.ds.val, nullptr, warm.params, det);
        return evaluate_params(cfg, bc, tuned.params, nullptr, seed);
    }

    obj::TrainConfig sto = cfg.stoch;
    sto.seed = seed;
    sto.threads = cfg.threads;
    const ctx::ContextSet* context = nullptr;
    if (strategy == "uninformative") {
        sto.uninformative = true;
    } else {
        context = &strategy_context(cfg, bc, strategy, seed);
    }
    auto tr = obj::train(bc.fnet, bc.ds.train, bc.ds.val, context, warm.params, sto);
    auto st = state_from_result(bc.fnet, tr);
    return evaluate_params(cfg, bc, tr.params, &st, seed);
}

StrategyResult run_strategy_all_seeds(const BenchConfig& cfg, BenchContext& bc,
                                      const std::string& strategy) {
    StrategyResult res;
    res.name = strategy;
    std::vector<double> a, p, sa, sp;
    for (uint64_t seed : cfg.seeds) {
        auto m = run_strategy(cfg, bc, strategy, seed);
        res.per_seed.push_back(m);
        a.push_back(m.auroc);
        p.push_back(m.auprc);
        sa.push_back(m.sel_auroc);
        sp.push_back(m.sel_auprc);
    }
    tune::mean_se(a, &res.auroc_mean, &res.auroc_se);
    tune::mean_se(p, &res.auprc_mean, &res.auprc_se);
    tune::mean_se(sa, &res.sel_auroc_mean, &res.sel_auroc_se);
    tune::mean_se(sp, &res.sel_auprc_mean, &res.sel_auprc_se);
    return res;
}

std::vector<StrategyResult> run_ablation(const BenchConfig& cfg, BenchContext& bc,
                                         const std::vector<std::string>& strategies) {
    std::vector<StrategyResult> rows;
    rows.reserve(strategies.size());
    for (const auto& s : strategies) rows.push_back(run_strategy_all_seeds(cfg, bc, s));
    return rows;
}

void write_ablation_csv(const std::vector<StrategyResult>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot write " + path);
    out.precision(17);
    out << "strategy,auroc_mean,auroc_se,auprc_mean,auprc_se,"
           "selective_auroc_mean,selective_auroc_se,selective_auprc_mean,selective_auprc_se\n";
    for (const auto& r : rows) {
        out << r.name << ',' << r.auroc_mean << ',' << r.auroc_se << ',' << r.auprc_mean << ','
            << r.auprc_se << ',' << r.sel_auroc_mean << ',' << r.sel_auroc_se << ','
            << r.sel_auprc_mean << ',' << r.sel_auprc_se << '\n';
    }
}

void write_ablation_json(const std::vector<StrategyResult>& rows, const std::string& path) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        nlohmann::ordered_json per_seed = nlohmann::ordered_json::array();
        for (const auto& m : r.per_seed)
            per_seed.push_back({{"seed", m.seed},
                                {"auroc", m.auroc},
                                {"auprc", m.auprc},
                                {"selective_auroc", m.sel_auroc},
                                {"selective_auprc", m.sel_auprc}});
        j.push_back({{"strategy", r.name},
                     {"auroc", {{"mean", r.auroc_mean}, {"se", r.auroc_se}}},
                     {"auprc", {{"mean", r.auprc_mean}, {"se", r.auprc_se}}},
                     {"selective_auroc", {{"mean", r.sel_auroc_mean}, {"se", r.sel_auroc_se}}},
                     {"selective_auprc", {{"mean", r.sel_auprc_mean}, {"se", r.sel_auprc_se}}},
                     {"per_seed", per_seed}});
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot write " + path);
    out << j.dump(2) << '\n';
}

}  // namespace certain::bench
