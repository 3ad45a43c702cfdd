#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "certain/mat.hpp"

namespace certain::data {

struct Group {
    std::string age_band;  // A1 | A2 | A3
    std::string sex;       // M | F
};

struct MultimodalSample {
    std::string id;
    Mat seq;   // T x F, standardized reals
    Mat img;   // H x W, values in [0,1]
    int label = 0;
    Group group;
    // Ground truth of the cross-modal mismatch mechanism. Written to disk for
    // selection-quality tests, never read by training code.
    bool mismatched = false;
};

struct Dims {
    int t = 48;
    int f = 8;
    int h = 16;
    int w = 16;
};

struct DatasetManifest {
    uint64_t seed = 1;
    int n_train = 1000;
    int n_val = 200;
    int n_test = 400;
    Dims dims;
    double mismatch_rate = 0.3;
    std::vector<std::string> shift_spec = {"drop_initial", "invert"};
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<MultimodalSample> train;
    std::vector<MultimodalSample> val;
    std::vector<MultimodalSample> test;
    std::vector<MultimodalSample> test_shifted;  // same ids/labels as test, corrupted inputs
};

// Synthetic paired-modality generator. A 4-dim latent drives an AR(1)
// sequence (drift A z), a smooth two-bump image field (B z), the Bernoulli
// label (sigmoid of an affine map of z), and the subgroup attributes
// (z-quantiles). With probability mismatch_rate a sample's image is
// regenerated from an independent latent. Deterministic for a fixed seed;
// per-sample streams derive from (seed, index).
Dataset generate(const DatasetManifest& manifest);

// JSONL serialization, one record per line. Writer uses %.17g so reloads are
// bit-exact. Reader reports malformed lines and missing fields by line
// number.
void save_jsonl(const std::vector<MultimodalSample>& samples, const std::string& path);
std::vector<MultimodalSample> load_jsonl(const std::string& path);

// Dataset directory: {train,val,test,test_shifted}.jsonl + dataset.manifest.json
void save(const Dataset& ds, const std::string& dir);
Dataset load(const std::string& dir);

void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

// Disjoint k-fold assignment over indexes into `train`; the val folds
// partition the whole set. Returned pairs are (train_fold, val_fold).
std::vector<std::pair<std::vector<int>, std::vector<int>>> split_cv(
    const std::vector<MultimodalSample>& train, int folds, uint64_t seed);

// Per-id Bernoulli(fraction) swap of test inputs for their shifted variants.
// Ids and labels are untouched.
std::vector<MultimodalSample> mix_shifted(const std::vector<MultimodalSample>& test,
                                          const std::vector<MultimodalSample>& shifted,
                                          double fraction, uint64_t seed);

double label_prevalence(const std::vector<MultimodalSample>& samples);
int count_mismatched(const std::vector<MultimodalSample>& samples);

}  // namespace certain::data
