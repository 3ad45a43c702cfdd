// certain: desk-scale uncertainty-aware multimodal training pipeline.
// Subcommands: generate | pretrain | context | train | eval | ablate | tune.
// Every command reads a JSON config (plus --set overrides), writes a
// resolved_config.json snapshot next to its outputs, and logs line-delimited
// JSON events to stdout. Exit codes: 0 success, 2 config error, 3 numeric
// failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "certain/bench.hpp"
#include "certain/contextset.hpp"
#include "certain/contrastive.hpp"
#include "certain/data.hpp"
#include "certain/evaluate.hpp"
#include "certain/net.hpp"
#include "certain/objective.hpp"
#include "certain/tune.hpp"
#include "certain/util.hpp"
#include "certain/varparams.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace certain;

namespace {

void log_event(const ordered_json& j) { std::cout << j.dump() << std::endl; }

ordered_json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot read config " + path);
    try {
        return ordered_json::parse(in);
    } catch (const json::exception& e) {
        throw parse_error(std::string("config ") + path + ": " + e.what());
    }
}

// --set a.b.c=value, value parsed as JSON when possible, else as a string
void apply_override(ordered_json& cfg, const std::string& kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw config_error("--set expects key=value, got '" + kv + "'");
    std::string key = kv.substr(0, eq), raw = kv.substr(eq + 1);
    ordered_json value;
    try {
        value = ordered_json::parse(raw);
    } catch (const json::exception&) {
        value = raw;
    }
    ordered_json* node = &cfg;
    size_t start = 0;
    while (true) {
        auto dot = key.find('.', start);
        std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw config_error("--set: empty path segment in '" + key + "'");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            break;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
}

template <typename T>
T get_or(const ordered_json& cfg, const std::string& key, T fallback) {
    auto it = cfg.find(key);
    if (it == cfg.end() || it->is_null()) return fallback;
    return it->get<T>();
}

std::string require_str(const ordered_json& cfg, const std::string& key, const std::string& hint) {
    auto it = cfg.find(key);
    if (it == cfg.end() || !it->is_string())
        throw config_error("config key '" + key + "' is required; " + hint);
    return it->get<std::string>();
}

// Output paths resolve against $CERTAIN_OUT_ROOT when relative.
std::string resolve_out_dir(const std::string& dir) {
    const char* root = std::getenv("CERTAIN_OUT_ROOT");
    if (root && *root && fs::path(dir).is_relative()) return (fs::path(root) / dir).string();
    return dir;
}

void check_precision(const ordered_json& cfg) {
    std::string p = get_or<std::string>(cfg, "precision", "f64");
    if (p != "f64")
        throw config_error("precision '" + p + "' is not supported; this build computes in f64");
}

void write_resolved(const ordered_json& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::ofstream out(fs::path(out_dir) / "resolved_config.json", std::ios::binary);
    if (!out) throw config_error("cannot write resolved_config.json in " + out_dir);
    out << cfg.dump(2) << '\n';
}

net::NetConfig net_config(const ordered_json& cfg, const data::DatasetManifest& m) {
    net::NetConfig nc;
    nc.t = m.dims.t;
    nc.f = m.dims.f;
    nc.h = m.dims.h;
    nc.w = m.dims.w;
    if (cfg.contains("net")) {
        const auto& n = cfg.at("net");
        nc.d_embed = get_or<int>(n, "d_embed", nc.d_embed);
        nc.conv1 = get_or<int>(n, "conv1", nc.conv1);
        nc.conv2 = get_or<int>(n, "conv2", nc.conv2);
    }
    return nc;
}

data::Dataset load_dataset(const ordered_json& cfg) {
    std::string dir = require_str(cfg, "data_dir", "point it at a `certain generate` output directory");
    if (!fs::exists(fs::path(dir) / "dataset.manifest.json"))
        throw config_error("no dataset found in '" + dir + "'; produce one with `certain generate`");
    return data::load(dir);
}

corrupt::Params corruption_params(const ordered_json& cfg) {
    corrupt::Params p;
    if (!cfg.contains("corruption")) return p;
    const auto& c = cfg.at("corruption");
    p.drop_fraction = get_or<double>(c, "drop_fraction", p.drop_fraction);
    p.noise_sigma = get_or<double>(c, "noise_sigma", p.noise_sigma);
    p.crop_area = get_or<double>(c, "crop_area", p.crop_area);
    p.solarize_threshold = get_or<double>(c, "solarize_threshold", p.solarize_threshold);
    p.jitter_scale_lo = get_or<double>(c, "jitter_scale_lo", p.jitter_scale_lo);
    p.jitter_scale_hi = get_or<double>(c, "jitter_scale_hi", p.jitter_scale_hi);
    p.jitter_shift = get_or<double>(c, "jitter_shift", p.jitter_shift);
    return p;
}

obj::TrainConfig train_config(const ordered_json& cfg, int threads) {
    obj::TrainConfig tc;
    tc.mode = get_or<std::string>(cfg, "mode", tc.mode);
    tc.lr = get_or<double>(cfg, "lr", tc.lr);
    tc.epochs = get_or<int>(cfg, "epochs", tc.epochs);
    tc.batch_size = get_or<int>(cfg, "batch_size", tc.batch_size);
    tc.context_batch_size = get_or<int>(cfg, "context_batch_size", tc.context_batch_size);
    tc.kl_scale = get_or<double>(cfg, "kl_scale", tc.kl_scale);
    tc.tau = get_or<double>(cfg, "tau", tc.tau);
    tc.s1 = get_or<double>(cfg, "s1", tc.s1);
    tc.s2 = get_or<double>(cfg, "s2", tc.s2);
    tc.prior_variance = get_or<double>(cfg, "prior_variance", tc.prior_variance);
    tc.stochastic_scope = get_or<std::string>(cfg, "stochastic_scope", tc.stochastic_scope);
    tc.seed = get_or<uint64_t>(cfg, "seed", tc.seed);
    tc.j_train = get_or<int>(cfg, "j_train", tc.j_train);
    tc.j_prime = get_or<int>(cfg, "j_prime", tc.j_prime);
    tc.epoch_val_samples = get_or<int>(cfg, "epoch_val_samples", tc.epoch_val_samples);
    tc.uninformative = get_or<bool>(cfg, "uninformative", tc.uninformative);
    tc.f_scale = get_or<double>(cfg, "f_scale", tc.f_scale);
    tc.threads = threads;
    return tc;
}

// ---------------------------------------------------------------- commands

int cmd_generate(const ordered_json& cfg) {
    std::string out_dir = resolve_out_dir(require_str(cfg, "out_dir", "where to write the dataset"));
    data::DatasetManifest m;
    m.seed = get_or<uint64_t>(cfg, "seed", m.seed);
    m.n_train = get_or<int>(cfg, "n_train", m.n_train);
    m.n_val = get_or<int>(cfg, "n_val", m.n_val);
    m.n_test = get_or<int>(cfg, "n_test", m.n_test);
    if (cfg.contains("dims")) {
        const auto& d = cfg.at("dims");
        m.dims.t = get_or<int>(d, "T", m.dims.t);
        m.dims.f = get_or<int>(d, "F", m.dims.f);
        m.dims.h = get_or<int>(d, "H", m.dims.h);
        m.dims.w = get_or<int>(d, "W", m.dims.w);
    }
    m.mismatch_rate = get_or<double>(cfg, "mismatch_rate", m.mismatch_rate);
    m.shift_spec = get_or<std::vector<std::string>>(cfg, "shift_spec", m.shift_spec);

    auto ds = data::generate(m);
    data::save(ds, out_dir);
    write_resolved(cfg, out_dir);
    log_event({{"event", "done"},
               {"command", "generate"},
               {"out_dir", out_dir},
               {"train", ds.train.size()},
               {"val", ds.val.size()},
               {"test", ds.test.size()},
               {"prevalence", data::label_prevalence(ds.train)},
               {"mismatched_train", data::count_mismatched(ds.train)}});
    return 0;
}

int cmd_pretrain(const ordered_json& cfg, int threads) {
    std::string out_dir = resolve_out_dir(require_str(cfg, "out_dir", "where to write the model"));
    auto ds = load_dataset(cfg);
    auto nc = net_config(cfg, ds.manifest);
    contrastive::PretrainConfig pc;
    pc.d_proj = get_or<int>(cfg, "d_proj", pc.d_proj);
    pc.temperature = get_or<double>(cfg, "temperature", pc.temperature);
    pc.batch_size = get_or<int>(cfg, "batch_size", pc.batch_size);
    pc.epochs = get_or<int>(cfg, "epochs", pc.epochs);
    pc.lr = get_or<double>(cfg, "lr", pc.lr);
    pc.lr_trials = get_or<int>(cfg, "lr_trials", pc.lr_trials);
    pc.lr_lo = get_or<double>(cfg, "lr_lo", pc.lr_lo);
    pc.lr_hi = get_or<double>(cfg, "lr_hi", pc.lr_hi);
    pc.seed = get_or<uint64_t>(cfg, "seed", pc.seed);
    pc.threads = threads;

    auto res = contrastive::pretrain(ds.train, ds.val, nc, pc);
    fs::create_directories(out_dir);
    contrastive::save_convirt(res.model, (fs::path(out_dir) / "convirt.ckpt").string());
    auto emb = contrastive::embed(res.model, ds.train, threads);
    contrastive::save_embeddings(emb, (fs::path(out_dir) / "embeddings.jsonl").string());
    ordered_json metrics = {{"best_val_retrieval", res.best_val_retrieval},
                            {"chosen_lr", res.chosen_lr},
                            {"loss_history", res.loss_history}};
    std::ofstream(fs::path(out_dir) / "pretrain_metrics.json") << metrics.dump(2) << '\n';
    write_resolved(cfg, out_dir);
    log_event({{"event", "done"},
               {"command", "pretrain"},
               {"out_dir", out_dir},
               {"val_retrieval", res.best_val_retrieval},
               {"lr", res.chosen_lr}});
    return 0;
}

int cmd_context(const ordered_json& cfg, int threads) {
    std::string out_dir = resolve_out_dir(require_str(cfg, "out_dir", "where to write the context set"));
    auto ds = load_dataset(cfg);
    std::string strategy = require_str(cfg, "strategy", "one of corruptions|inter|inter_intra|"
                                                        "medcertain_I|medcertain_II|hem");
    ctx::BuildInputs in;
    in.train = &ds.train;
    in.corruption = corruption_params(cfg);
    in.v = get_or<double>(cfg, "v", in.v);
    in.c_thresh = get_or<double>(cfg, "c_thresh", in.c_thresh);
    in.hem_fraction = get_or<double>(cfg, "hem_fraction", in.hem_fraction);
    in.seed = get_or<uint64_t>(cfg, "seed", ds.manifest.seed);
    in.threads = threads;

    contrastive::EmbeddingSet emb;
    if (cfg.contains("embeddings")) {
        std::string path = cfg.at("embeddings").get<std::string>();
        if (!fs::exists(path))
            throw config_error("embeddings file '" + path + "' not found; run `certain pretrain`");
        emb = contrastive::load_embeddings(path);
        in.embeddings = &emb;
    }
    net::FusionNet fnet(net_config(cfg, ds.manifest));
    net::Checkpoint ck;
    if (cfg.contains("checkpoint")) {
        std::string path = cfg.at("checkpoint").get<std::string>();
        if (!fs::exists(path))
            throw config_error("checkpoint '" + path + "' not found; run `certain train`");
        ck = net::load_checkpoint(path);
        in.fnet = &fnet;
        in.model_params = ck.mu;
    }

    auto cs = ctx::build(strategy, in);
    fs::create_directories(out_dir);
    ctx::save_context(cs, (fs::path(out_dir) / "context.jsonl").string());
    ordered_json stats = {{"strategy", strategy}, {"size", cs.size()}};
    if (in.embeddings &&
        (strategy == "inter" || strategy == "inter_intra" || strategy == "medcertain_I" ||
         strategy == "medcertain_II")) {
        auto [sel, st] = strategy == "inter" || strategy == "medcertain_I"
                             ? ctx::select_inter(ds.train, *in.embeddings, in.v)
                             : ctx::select_inter_intra(ds.train, *in.embeddings, in.c_thresh);
        stats["similarity"] = {{"gamma1", st.gamma1}, {"gamma2", st.gamma2},
                               {"gamma3", st.gamma3}, {"gamma4", st.gamma4},
                               {"sigma", st.sigma},   {"sigma4", st.sigma4},
                               {"t", st.t},           {"t4", st.t4},
                               {"selected", sel.size()}, {"excluded", st.excluded}};
    }
    std::ofstream(fs::path(out_dir) / "selection_stats.json") << stats.dump(2) << '\n';
    write_resolved(cfg, out_dir);
    log_event({{"event", "done"}, {"command", "context"}, {"out_dir", out_dir},
               {"strategy", strategy}, {"size", cs.size()}});
    return 0;
}

int cmd_train(const ordered_json& cfg, int threads) {
    std::string out_dir = resolve_out_dir(require_str(cfg, "out_dir", "where to write the checkpoint"));
    auto ds = load_dataset(cfg);
    net::FusionNet fnet(net_config(cfg, ds.manifest));
    auto tc = train_config(cfg, threads);

    ctx::ContextSet context;
    const ctx::ContextSet* context_ptr = nullptr;
    if (cfg.contains("context_path")) {
        std::string path = cfg.at("context_path").get<std::string>();
        if (!fs::exists(path))
            throw config_error("context set '" + path + "' not found; run `certain context`");
        context = ctx::load_context(path);
        context_ptr = &context;
    }
    std::vector<double> warmstart;
    if (cfg.contains("warmstart")) {
        std::string path = cfg.at("warmstart").get<std::string>();
        if (!fs::exists(path))
            throw config_error("warm-start checkpoint '" + path + "' not found; run `certain train` "
                               "in deterministic mode first");
        warmstart = net::load_checkpoint(path).mu;
    }

    auto res = obj::train(fnet, ds.train, ds.val, context_ptr, warmstart, tc);

    fs::create_directories(out_dir);
    std::string ckpt = (fs::path(out_dir) / "checkpoint.ckpt").string();
    if (tc.mode == "stochastic")
        net::save_checkpoint(ckpt, fnet, res.params, res.log_var, res.scope, res.stoch_begin);
    else
        net::save_checkpoint(ckpt, fnet, res.params);
    {
        std::ofstream mcsv(fs::path(out_dir) / "metrics.csv", std::ios::binary);
        mcsv.precision(17);
        mcsv << "epoch,nll,kl_h,kl_L,unc_cost,val_auroc,val_auprc\n";
        for (const auto& e : res.history)
            mcsv << e.epoch << ',' << e.nll << ',' << e.kl_h << ',' << e.kl_L << ',' << e.unc_cost
                 << ',' << e.val_auroc << ',' << e.val_auprc << '\n';
    }
    write_resolved(cfg, out_dir);
    for (const auto& e : res.history)
        log_event({{"event", "epoch"}, {"epoch", e.epoch}, {"nll", e.nll}, {"kl_h", e.kl_h},
                   {"kl_L", e.kl_L}, {"unc_cost", e.unc_cost}, {"val_auroc", e.val_auroc},
                   {"val_auprc", e.val_auprc}});
    log_event({{"event", "done"}, {"command", "train"}, {"out_dir", out_dir},
               {"checkpoint", ckpt}, {"mode", tc.mode}});
    return 0;
}

int cmd_eval(const ordered_json& cfg, int threads) {
    std::string out_dir = resolve_out_dir(require_str(cfg, "out_dir", "where to write the report"));
    auto ds = load_dataset(cfg);
    std::string ckpt_path = require_str(cfg, "checkpoint", "a `certain train` output");
    if (!fs::exists(ckpt_path))
        throw config_error("checkpoint '" + ckpt_path + "' not found; run `certain train`");
    auto ck = net::load_checkpoint(ckpt_path);
    net::FusionNet fnet(ck.net);

    std::string split = get_or<std::string>(cfg, "split", "test");
    std::vector<data::MultimodalSample> samples;
    if (split == "test") samples = ds.test;
    else if (split == "test_shifted") samples = ds.test_shifted;
    else if (split == "val") samples = ds.val;
    else if (split == "mixed")
        samples = data::mix_shifted(ds.test, ds.test_shifted,
                                    get_or<double>(cfg, "mix_fraction", 0.5),
                                    get_or<uint64_t>(cfg, "mix_seed", 9001));
    else throw config_error("split must be test|test_shifted|val|mixed");

    var::VarState st;
    const var::VarState* vs = nullptr;
    if (!ck.log_var.empty()) {
        st = var::make_state(fnet, ck.mu, ck.scope.empty() ? "all" : ck.scope);
        st.log_var = ck.log_var;
        vs = &st;
    }
    int j_eval = get_or<int>(cfg, "j_eval", 32);
    uint64_t seed = get_or<uint64_t>(cfg, "seed", 1);
    auto preds = eval::predict(fnet, ck.mu, vs, samples, j_eval, seed, threads);
    std::vector<int> labels(samples.size());
    std::vector<data::Group> groups(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) {
        labels[i] = samples[i].label;
        groups[i] = samples[i].group;
    }
    auto report = eval::subgroup_report(preds, labels, groups);
    fs::create_directories(out_dir);
    eval::write_report_json(report, (fs::path(out_dir) / "report.json").string());
    eval::write_report_csv(report, (fs::path(out_dir) / "report.csv").string());
    write_resolved(cfg, out_dir);
    log_event({{"event", "done"}, {"command", "eval"}, {"out_dir", out_dir}, {"split", split},
               {"n", samples.size()}, {"j_eval", vs ? j_eval : 1},
               {"auroc", report.overall.full_auroc.value_or(-1.0)},
               {"selective_auroc", report.overall.selective_auroc.value_or(-1.0)}});
    return 0;
}

bench::BenchConfig bench_config(const ordered_json& cfg, int threads) {
    bench::BenchConfig bc = bench::default_bench();
    if (cfg.contains("manifest")) {
        const auto& m = cfg.at("manifest");
        bc.manifest.seed = get_or<uint64_t>(m, "seed", bc.manifest.seed);
        bc.manifest.n_train = get_or<int>(m, "n_train", bc.manifest.n_train);
        bc.manifest.n_val = get_or<int>(m, "n_val", bc.manifest.n_val);
        bc.manifest.n_test = get_or<int>(m, "n_test", bc.manifest.n_test);
        bc.manifest.mismatch_rate = get_or<double>(m, "mismatch_rate", bc.manifest.mismatch_rate);
        if (m.contains("dims")) {
            const auto& d = m.at("dims");
            bc.manifest.dims.t = get_or<int>(d, "T", bc.manifest.dims.t);
            bc.manifest.dims.f = get_or<int>(d, "F", bc.manifest.dims.f);
            bc.manifest.dims.h = get_or<int>(d, "H", bc.manifest.dims.h);
            bc.manifest.dims.w = get_or<int>(d, "W", bc.manifest.dims.w);
        }
        bc.manifest.shift_spec =
            get_or<std::vector<std::string>>(m, "shift_spec", bc.manifest.shift_spec);
    }
    bc.net.t = bc.manifest.dims.t;
    bc.net.f = bc.manifest.dims.f;
    bc.net.h = bc.manifest.dims.h;
    bc.net.w = bc.manifest.dims.w;
    if (cfg.contains("net")) {
        const auto& n = cfg.at("net");
        bc.net.d_embed = get_or<int>(n, "d_embed", bc.net.d_embed);
        bc.net.conv1 = get_or<int>(n, "conv1", bc.net.conv1);
        bc.net.conv2 = get_or<int>(n, "conv2", bc.net.conv2);
    }
    if (cfg.contains("pretrain")) {
        const auto& p = cfg.at("pretrain");
        bc.pretrain.epochs = get_or<int>(p, "epochs", bc.pretrain.epochs);
        bc.pretrain.lr = get_or<double>(p, "lr", bc.pretrain.lr);
        bc.pretrain.lr_trials = get_or<int>(p, "lr_trials", bc.pretrain.lr_trials);
        bc.pretrain.seed = get_or<uint64_t>(p, "seed", bc.pretrain.seed);
        bc.pretrain.batch_size = get_or<int>(p, "batch_size", bc.pretrain.batch_size);
        bc.pretrain.d_proj = get_or<int>(p, "d_proj", bc.pretrain.d_proj);
    }
    if (cfg.contains("det")) {
        auto det = train_config(cfg.at("det"), threads);
        det.mode = "deterministic";
        bc.det = det;
    }
    if (cfg.contains("stoch")) {
        auto sto = train_config(cfg.at("stoch"), threads);
        sto.mode = "stochastic";
        bc.stoch = sto;
    }
    bc.mix_fraction = get_or<double>(cfg, "mix_fraction", bc.mix_fraction);
    bc.mix_seed = get_or<uint64_t>(cfg, "mix_seed", bc.mix_seed);
    bc.j_eval = get_or<int>(cfg, "j_eval", bc.j_eval);
    bc.seeds = get_or<std::vector<uint64_t>>(cfg, "seeds", bc.seeds);
    bc.v = get_or<double>(cfg, "v", bc.v);
    bc.c_thresh = get_or<double>(cfg, "c_thresh", bc.c_thresh);
    bc.hem_fraction = get_or<double>(cfg, "hem_fraction", bc.hem_fraction);
    bc.det.threads = bc.stoch.threads = bc.pretrain.threads = threads;
    bc.threads = threads;
    return bc;
}

int cmd_ablate(const ordered_json& cfg, int threads) {
    std::string out_dir = resolve_out_dir(require_str(cfg, "out_dir", "where to write the table"));
    auto bcfg = bench_config(cfg, threads);
    std::vector<std::string> strategies = get_or<std::vector<std::string>>(
        cfg, "strategies",
        {"uninformative", "corruptions", "inter", "inter_intra", "medcertain_I", "medcertain_II",
         "hem"});

    log_event({{"event", "start"}, {"command", "ablate"}, {"strategies", strategies},
               {"seeds", bcfg.seeds}});
    auto bc = bench::prepare(bcfg);
    std::vector<bench::StrategyResult> rows;
    for (const auto& s : strategies) {
        rows.push_back(bench::run_strategy_all_seeds(bcfg, bc, s));
        const auto& r = rows.back();
        log_event({{"event", "strategy"}, {"name", r.name},
                   {"auroc", r.auroc_mean}, {"selective_auroc", r.sel_auroc_mean}});
    }
    fs::create_directories(out_dir);
    bench::write_ablation_csv(rows, (fs::path(out_dir) / "ablation_table.csv").string());
    bench::write_ablation_json(rows, (fs::path(out_dir) / "ablation_table.json").string());
    write_resolved(cfg, out_dir);
    log_event({{"event", "done"}, {"command", "ablate"}, {"out_dir", out_dir}});
    return 0;
}

int cmd_tune(const ordered_json& cfg, int threads, const std::string& mode_flag, int configs_flag,
             int seeds_flag) {
    std::string out_dir = resolve_out_dir(require_str(cfg, "out_dir", "where to write trial records"));
    auto ds = load_dataset(cfg);
    net::FusionNet fnet(net_config(cfg, ds.manifest));

    std::string mode = mode_flag.empty() ? get_or<std::string>(cfg, "mode", "det") : mode_flag;
    if (mode == "det") mode = "deterministic";
    if (mode == "stoch") mode = "stochastic";
    int n_configs = configs_flag > 0 ? configs_flag : get_or<int>(cfg, "configs", 10);
    int n_seeds = seeds_flag > 0 ? seeds_flag : get_or<int>(cfg, "seeds", 3);
    uint64_t master_seed = get_or<uint64_t>(cfg, "master_seed", 1);

    tune::SearchSpace space;
    space.best_det_lr = get_or<double>(cfg, "best_det_lr", space.best_det_lr);
    space.batch_size = get_or<int>(cfg, "batch_size", space.batch_size);

    ctx::ContextSet context;
    const ctx::ContextSet* context_ptr = nullptr;
    std::vector<double> warmstart;
    if (mode == "stochastic") {
        std::string cpath = require_str(cfg, "context_path", "run `certain context` first");
        if (!fs::exists(cpath)) throw config_error("context set '" + cpath + "' not found");
        context = ctx::load_context(cpath);
        context_ptr = &context;
        std::string wpath = require_str(cfg, "warmstart", "run deterministic `certain train` first");
        if (!fs::exists(wpath)) throw config_error("warm-start checkpoint '" + wpath + "' not found");
        warmstart = net::load_checkpoint(wpath).mu;
    }

    // pool = train + val; each run resamples its own split (fold = seed index)
    std::vector<data::MultimodalSample> pool = ds.train;
    pool.insert(pool.end(), ds.val.begin(), ds.val.end());
    int n_val = static_cast<int>(ds.val.size());

    auto run = [&](const tune::TrialConfig& tc, uint64_t seed, int fold,
                   std::string* ckpt) -> std::array<double, 2> {
        (void)ckpt;
        std::vector<int> order(pool.size());
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(seed, hash_str("tune_resplit"), static_cast<uint64_t>(fold)));
        rng.shuffle(order);
        std::vector<data::MultimodalSample> tr, va;
        for (size_t i = 0; i < order.size(); ++i)
            (static_cast<int>(i) < n_val ? va : tr).push_back(pool[static_cast<size_t>(order[i])]);

        obj::TrainConfig run_cfg;
        run_cfg.mode = tc.mode;
        run_cfg.lr = tc.lr;
        run_cfg.epochs = tc.epochs;
        run_cfg.batch_size = space.batch_size;
        run_cfg.context_batch_size = tc.context_batch;
        run_cfg.kl_scale = tc.kl_scale;
        run_cfg.tau = tc.tau;
        run_cfg.s1 = tc.s1;
        run_cfg.s2 = tc.s2;
        run_cfg.prior_variance = tc.prior_variance;
        run_cfg.seed = seed;
        run_cfg.threads = threads;
        auto res = obj::train(fnet, tr, va, context_ptr,
                              tc.mode == "stochastic" ? std::span<const double>(warmstart)
                                                      : std::span<const double>(),
                              run_cfg);
        const auto& last = res.history.back();
        return {last.val_auroc, last.val_auprc};
    };

    auto result = tune::search(space, mode, n_configs, n_seeds, master_seed, run);
    fs::create_directories(out_dir);
    tune::save_trials(result.records, (fs::path(out_dir) / "trials.jsonl").string());
    tune::save_best(result, (fs::path(out_dir) / "best.json").string());
    write_resolved(cfg, out_dir);
    log_event({{"event", "done"}, {"command", "tune"}, {"out_dir", out_dir},
               {"best_index", result.best_index},
               {"best_mean_val_auroc", result.best_mean_val_auroc},
               {"failed_trials", result.failed_trials}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"certain: uncertainty-aware multimodal training at desk scale"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    int threads = 1;
    int64_t seed_flag = -1;
    std::string precision = "f64";

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file")->required();
        sub->add_option("--set", overrides, "override config keys, e.g. --set lr=0.001");
        sub->add_option("--threads", threads, "worker threads (default 1, fully deterministic)");
        sub->add_option("--seed", seed_flag, "override the config seed");
        sub->add_option("--precision", precision, "numeric width (only f64 is implemented)");
    };

    auto* c_generate = app.add_subcommand("generate", "synthesize a paired-modality dataset");
    auto* c_pretrain = app.add_subcommand("pretrain", "contrastive encoder pretraining");
    auto* c_context = app.add_subcommand("context", "build a high-uncertainty context set");
    auto* c_train = app.add_subcommand("train", "deterministic or stochastic training");
    auto* c_eval = app.add_subcommand("eval", "predictive evaluation and selective sweep");
    auto* c_ablate = app.add_subcommand("ablate", "compare context strategies end to end");
    auto* c_tune = app.add_subcommand("tune", "random-search hyperparameter tuning");
    for (auto* sub : {c_generate, c_pretrain, c_context, c_train, c_eval, c_ablate, c_tune})
        add_common(sub);

    std::string ctx_strategy;
    double ctx_v = -1.0, ctx_c_thresh = -1.0, ctx_hem_fraction = -1.0;
    c_context->add_option("--context-strategy", ctx_strategy, "strategy override");
    c_context->add_option("--v", ctx_v, "inter-modal threshold multiplier");
    c_context->add_option("--c-thresh", ctx_c_thresh, "inter+intra threshold multiplier");
    c_context->add_option("--hem-fraction", ctx_hem_fraction, "hard-example fraction");

    std::string tune_mode;
    int tune_configs = 0, tune_seeds = 0;
    c_tune->add_option("--mode", tune_mode, "det|stoch");
    c_tune->add_option("--configs", tune_configs, "number of sampled configurations");
    c_tune->add_option("--seeds", tune_seeds, "seeds per configuration");

    CLI11_PARSE(app, argc, argv);

    try {
        ordered_json cfg = load_config(config_path);
        for (const auto& kv : overrides) apply_override(cfg, kv);
        if (seed_flag >= 0) cfg["seed"] = static_cast<uint64_t>(seed_flag);
        if (!cfg.contains("precision")) cfg["precision"] = precision;
        else if (precision != "f64") cfg["precision"] = precision;
        check_precision(cfg);
        cfg["threads"] = threads;

        if (c_context->parsed()) {
            if (!ctx_strategy.empty()) cfg["strategy"] = ctx_strategy;
            if (ctx_v >= 0.0) cfg["v"] = ctx_v;
            if (ctx_c_thresh >= 0.0) cfg["c_thresh"] = ctx_c_thresh;
            if (ctx_hem_fraction >= 0.0) cfg["hem_fraction"] = ctx_hem_fraction;
        }

        if (c_generate->parsed()) return cmd_generate(cfg);
        if (c_pretrain->parsed()) return cmd_pretrain(cfg, threads);
        if (c_context->parsed()) return cmd_context(cfg, threads);
        if (c_train->parsed()) return cmd_train(cfg, threads);
        if (c_eval->parsed()) return cmd_eval(cfg, threads);
        if (c_ablate->parsed()) return cmd_ablate(cfg, threads);
        if (c_tune->parsed()) return cmd_tune(cfg, threads, tune_mode, tune_configs, tune_seeds);
        return 2;
    } catch (const config_error& e) {
        log_event({{"event", "error"}, {"kind", "config"}, {"message", e.what()}});
        return 2;
    } catch (const parse_error& e) {
        log_event({{"event", "error"}, {"kind", "parse"}, {"message", e.what()}});
        return 2;
    } catch (const shape_error& e) {
        log_event({{"event", "error"}, {"kind", "shape"}, {"message", e.what()}});
        return 2;
    } catch (const numeric_error& e) {
        log_event({{"event", "error"}, {"kind", "numeric"}, {"message", e.what()}});
        return 3;
    } catch (const std::exception& e) {
        log_event({{"event", "error"}, {"kind", "internal"}, {"message", e.what()}});
        return 3;
    }
}
