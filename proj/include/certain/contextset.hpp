#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "certain/contrastive.hpp"
#include "certain/corrupt.hpp"
#include "certain/data.hpp"
#include "certain/net.hpp"

namespace certain::ctx {

// One a-priori high-uncertainty input pair. No label is retained; the
// training objective treats the target as the zero logit.
struct ContextItem {
    std::string source_id;
    Mat seq;
    Mat img;
    std::string provenance;  // corruption:<kind> | similarity:inter | similarity:inter_intra | hem
    data::Group group;
    bool source_mismatched = false;
};

struct ContextSet {
    std::vector<ContextItem> items;
    int size() const { return static_cast<int>(items.size()); }
};

struct SimilarityStats {
    std::vector<double> d;  // per-sample inter-modal cosine similarity
    double gamma1 = 0.0, gamma2 = 0.0, gamma3 = 0.0, gamma4 = 0.0;
    double sigma = 0.0, sigma4 = 0.0;
    double v = 1.5, c_thresh = 1.5;
    double t = 0.0, t4 = 0.0;
    int excluded = 0;  // zero-norm embeddings skipped with a warning count
};

// Every corruption kind applied once per training sample (3 sequence kinds +
// 7 image kinds -> 10N items). Per-(sample, kind) RNG streams keep this
// deterministic and order-free.
ContextSet build_corruptions(const std::vector<data::MultimodalSample>& train,
                             const corrupt::Params& params, uint64_t seed);

// Left-tail selection on the inter-modal cosine d_i = cos(phi_ehr, phi_cxr):
// t = gamma1 - v*sigma, keep d_i < t.
std::pair<ContextSet, SimilarityStats> select_inter(
    const std::vector<data::MultimodalSample>& train, const contrastive::EmbeddingSet& emb,
    double v);

// Adds intra-modal cosines to the per-modality mean embedding:
// s_i = (d_i + cos(phi_ehr_i, mean_ehr) + cos(phi_cxr_i, mean_cxr)) / 3,
// t4 = gamma4 - c_thresh*sigma4, keep s_i < t4.
std::pair<ContextSet, SimilarityStats> select_inter_intra(
    const std::vector<data::MultimodalSample>& train, const contrastive::EmbeddingSet& emb,
    double c_thresh);

// Top ceil(fraction*N) training inputs by per-sample BCE loss of the given
// deterministic model, labels discarded.
ContextSet select_hem(const net::FusionNet& fnet, std::span<const double> params,
                      const std::vector<data::MultimodalSample>& train, double fraction,
                      int threads = 1);

struct BuildInputs {
    const std::vector<data::MultimodalSample>* train = nullptr;
    const contrastive::EmbeddingSet* embeddings = nullptr;  // similarity strategies
    const net::FusionNet* fnet = nullptr;                   // hem
    std::span<const double> model_params;                   // hem
    corrupt::Params corruption;
    double v = 1.5;
    double c_thresh = 1.5;
    double hem_fraction = 0.2;
    uint64_t seed = 1;
    int threads = 1;
};

// strategy in {corruptions, inter, inter_intra, medcertain_I, medcertain_II,
// hem}; medcertain_I = corruptions + inter, medcertain_II = corruptions +
// inter_intra. Duplicates across provenances are retained.
ContextSet build(const std::string& strategy, const BuildInputs& in);

// Dataset JSONL shape with "label": null and an added "provenance" field.
void save_context(const ContextSet& cs, const std::string& path);
ContextSet load_context(const std::string& path);

}  // namespace certain::ctx
