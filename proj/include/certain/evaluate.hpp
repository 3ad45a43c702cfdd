#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "certain/data.hpp"
#include "certain/net.hpp"
#include "certain/varparams.hpp"

namespace certain::eval {

struct PredictiveDistribution {
    std::string id;
    std::vector<double> mc_probs;  // length J_eval
    double mean_prob = 0.0;
    double entropy = 0.0;  // of the MC-mean probability, in [0, ln 2]
};

// Binary Shannon entropy of p, clamped so H(0) = H(1) = 0.
double shannon_entropy(double p);

// Monte Carlo predictive distribution. For a deterministic model pass
// vs == nullptr; J_eval is then forced to 1. Parameter draws are shared
// across samples and keyed by (seed, draw index).
std::vector<PredictiveDistribution> predict(const net::FusionNet& fnet,
                                            std::span<const double> base_params,
                                            const var::VarState* vs,
                                            const std::vector<data::MultimodalSample>& samples,
                                            int j_eval, uint64_t seed, int threads = 1);

// Mann-Whitney AUROC, ties credited one half. nullopt when a class is absent.
std::optional<double> auroc(std::span<const double> scores, std::span<const int> labels);

// Average precision (stepwise, descending scores, ties broken by stable
// index). nullopt without positives.
std::optional<double> auprc(std::span<const double> scores, std::span<const int> labels);

struct ThresholdRow {
    int tau = 0;  // percent of most-uncertain samples dropped
    int retained = 0;
    std::optional<double> auroc;
    std::optional<double> auprc;
};

struct SweepResult {
    std::vector<ThresholdRow> rows;  // tau = 0..99
    std::optional<double> full_auroc, full_auprc;          // tau = 0 row
    std::optional<double> selective_auroc, selective_auprc;  // mean over defined rows
    int undefined_auroc = 0, undefined_auprc = 0;
    double ece_10bin = 0.0;  // informational calibration score, not a paper metric
    bool degenerate = false;  // too few samples or a single class
};

// Rejection sweep over tau = 0%..99%: drop the floor(tau/100*N) highest-
// entropy samples (ties broken by stable input order), score the retained
// set by mean_prob. The tau=0 row equals the full-set metrics exactly.
SweepResult selective_sweep(const std::vector<PredictiveDistribution>& preds,
                            std::span<const int> labels);

struct SelectiveReport {
    SweepResult overall;
    // keys: age:A1, age:A2, age:A3, sex:M, sex:F
    std::map<std::string, SweepResult> subgroups;
};

SelectiveReport subgroup_report(const std::vector<PredictiveDistribution>& preds,
                                std::span<const int> labels,
                                const std::vector<data::Group>& groups);

double ece_10bin(const std::vector<PredictiveDistribution>& preds, std::span<const int> labels);

void write_report_json(const SelectiveReport& rep, const std::string& path);
void write_report_csv(const SelectiveReport& rep, const std::string& path);

}  // namespace certain::eval
