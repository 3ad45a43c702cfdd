#include "certain/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "certain/optim.hpp"
#include "certain/rng.hpp"
#include "certain/util.hpp"

namespace certain::contrastive {

namespace {

int proj_param_count(int d_embed, int d_proj) { return 2 * (d_proj * d_embed + d_proj); }

// u = P e + b, z = u / max(||u||, 1e-12). modality: 0 = ehr, 1 = cxr.
void project(const std::vector<double>& proj, int d_embed, int d_proj, int modality,
             std::span<const double> emb, std::span<double> z_out, std::span<double> u_out) {
    int base = modality * (d_proj * d_embed + d_proj);
    const double* p = proj.data() + base;
    const double* b = proj.data() + base + d_proj * d_embed;
    double nrm2 = 0.0;
    for (int i = 0; i < d_proj; ++i) {
        const double* row = p + static_cast<size_t>(i) * d_embed;
        double s = b[i];
        for (int j = 0; j < d_embed; ++j) s += row[j] * emb[static_cast<size_t>(j)];
        u_out[static_cast<size_t>(i)] = s;
        nrm2 += s * s;
    }
    double nrm = std::max(std::sqrt(nrm2), 1e-12);
    for (int i = 0; i < d_proj; ++i) z_out[static_cast<size_t>(i)] = u_out[static_cast<size_t>(i)] / nrm;
}

// Accumulates gradients through normalize + affine into d_emb and the
// projection parameter slice.
void project_backward(const std::vector<double>& proj, int d_embed, int d_proj, int modality,
                      std::span<const double> emb, std::span<const double> u,
                      std::span<const double> dz, std::span<double> d_emb,
                      std::span<double> g_proj) {
    int base = modality * (d_proj * d_embed + d_proj);
    const double* p = proj.data() + base;
    double nrm2 = 0.0;
    for (int i = 0; i < d_proj; ++i) nrm2 += u[static_cast<size_t>(i)] * u[static_cast<size_t>(i)];
    double nrm = std::sqrt(nrm2);
    if (nrm < 1e-12) return;  // degenerate point, no useful direction
    double zdot = 0.0;
    for (int i = 0; i < d_proj; ++i) zdot += u[static_cast<size_t>(i)] / nrm * dz[static_cast<size_t>(i)];
    for (int i = 0; i < d_proj; ++i) {
        double du = (dz[static_cast<size_t>(i)] - (u[static_cast<size_t>(i)] / nrm) * zdot) / nrm;
        double* grow = g_proj.data() + base + static_cast<size_t>(i) * d_embed;
        const double* row = p + static_cast<size_t>(i) * d_embed;
        for (int j = 0; j < d_embed; ++j) {
            grow[j] += du * emb[static_cast<size_t>(j)];
            d_emb[static_cast<size_t>(j)] += du * row[j];
        }
        g_proj[static_cast<size_t>(base + d_proj * d_embed + i)] += du;
    }
}

std::string fmt_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

}  // namespace

double info_nce(const Mat& z_a, const Mat& z_b, double temperature) {
    return info_nce_with_grad(z_a, z_b, temperature, nullptr, nullptr);
}

double info_nce_with_grad(const Mat& z_a, const Mat& z_b, double temperature, Mat* dz_a,
                          Mat* dz_b) {
    if (temperature <= 0.0) throw config_error("info_nce: temperature must be > 0");
    if (!z_a.same_shape(z_b)) throw shape_error("info_nce: shape mismatch");
    const int b = z_a.rows, d = z_a.cols;
    if (b < 1) throw shape_error("info_nce: empty batch");

    Mat p(b, b);  // row-wise softmax of sim / temperature
    double loss = 0.0;
    for (int i = 0; i < b; ++i) {
        double mx = -1e300;
        for (int j = 0; j < b; ++j) {
            double s = dot(std::span<const double>(z_a.row(i), static_cast<size_t>(d)),
                           std::span<const double>(z_b.row(j), static_cast<size_t>(d))) /
                       temperature;
            p(i, j) = s;
            mx = std::max(mx, s);
        }
        double denom = 0.0;
        for (int j = 0; j < b; ++j) {
            p(i, j) = std::exp(p(i, j) - mx);
            denom += p(i, j);
        }
        for (int j = 0; j < b; ++j) p(i, j) /= denom;
        loss += -std::log(std::max(p(i, i), 1e-300));
    }
    loss /= static_cast<double>(b);

    if (dz_a && dz_b) {
        if (!dz_a->same_shape(z_a)) *dz_a = Mat(b, d);
        if (!dz_b->same_shape(z_b)) *dz_b = Mat(b, d);
        for (int i = 0; i < b; ++i) {
            for (int j = 0; j < b; ++j) {
                double g = (p(i, j) - (i == j ? 1.0 : 0.0)) / (temperature * b);
                for (int k = 0; k < d; ++k) {
                    (*dz_a)(i, k) += g * z_b(j, k);
                    (*dz_b)(j, k) += g * z_a(i, k);
                }
            }
        }
    }
    return loss;
}

EmbeddingSet embed(const ConvirtModel& model, const std::vector<data::MultimodalSample>& samples,
                   int threads) {
    net::FusionNet fnet(model.net_cfg);
    const int d = model.net_cfg.d_embed, dp = model.d_proj;
    EmbeddingSet out;
    out.ids.resize(samples.size());
    out.phi_ehr = Mat(static_cast<int>(samples.size()), dp);
    out.phi_cxr = Mat(static_cast<int>(samples.size()), dp);
    parallel_for(static_cast<int>(samples.size()), threads, [&](int i) {
        auto fo = fnet.forward(model.enc_params, samples[static_cast<size_t>(i)]);
        std::vector<double> u(static_cast<size_t>(dp));
        project(model.proj_params, d, dp, 0, fo.emb_ehr,
                std::span<double>(out.phi_ehr.row(i), static_cast<size_t>(dp)), u);
        project(model.proj_params, d, dp, 1, fo.emb_cxr,
                std::span<double>(out.phi_cxr.row(i), static_cast<size_t>(dp)), u);
        out.ids[static_cast<size_t>(i)] = samples[static_cast<size_t>(i)].id;
    });
    return out;
}

double retrieval_accuracy(const EmbeddingSet& emb) {
    const int n = emb.phi_ehr.rows, d = emb.phi_ehr.cols;
    if (n == 0) return 0.0;
    int hits = 0;
    for (int dir = 0; dir < 2; ++dir) {
        const Mat& q = dir == 0 ? emb.phi_ehr : emb.phi_cxr;
        const Mat& k = dir == 0 ? emb.phi_cxr : emb.phi_ehr;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_s = -1e300;
            for (int j = 0; j < n; ++j) {
                double s = dot(std::span<const double>(q.row(i), static_cast<size_t>(d)),
                               std::span<const double>(k.row(j), static_cast<size_t>(d)));
                if (s > best_s) {
                    best_s = s;
                    best = j;
                }
            }
            hits += best == i ? 1 : 0;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(2 * n);
}

PretrainResult pretrain(const std::vector<data::MultimodalSample>& train,
                        const std::vector<data::MultimodalSample>& val, const net::NetConfig& ncfg,
                        const PretrainConfig& cfg) {
    if (train.size() < 2) throw config_error("pretrain: training split needs at least 2 samples");
    if (cfg.epochs < 1 || cfg.lr_trials < 1) throw config_error("pretrain: bad epochs/lr_trials");
    net::FusionNet fnet(ncfg);
    const int d = ncfg.d_embed, dp = cfg.d_proj;
    const int pe = fnet.param_count();
    const int pp = proj_param_count(d, dp);
    const int n = static_cast<int>(train.size());
    const int batch = std::max(2, std::min(cfg.batch_size, n));

    PretrainResult best;
    best.best_val_retrieval = -1.0;

    for (int trial = 0; trial < cfg.lr_trials; ++trial) {
        double lr = cfg.lr;
        if (cfg.lr_trials > 1) {
            Rng lr_rng(derive_seed(cfg.seed, hash_str("pretrain_lr"), static_cast<uint64_t>(trial)));
            lr = lr_rng.log_uniform(cfg.lr_lo, cfg.lr_hi);
        }
        std::vector<double> params = fnet.init_params(
            derive_seed(cfg.seed, hash_str("pretrain_enc"), static_cast<uint64_t>(trial)));
        params.resize(static_cast<size_t>(pe + pp));
        {
            Rng prng(derive_seed(cfg.seed, hash_str("pretrain_proj"), static_cast<uint64_t>(trial)));
            double bound = 1.0 / std::sqrt(static_cast<double>(d));
            for (int i = 0; i < pp; ++i) params[static_cast<size_t>(pe + i)] = prng.uniform(-bound, bound);
        }

        opt::AdamState adam;
        std::vector<int> order(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        std::vector<double> trial_losses;
        double trial_best_acc = -1.0;
        std::vector<double> trial_best_params;

        auto model_of = [&](const std::vector<double>& pv) {
            ConvirtModel m;
            m.net_cfg = ncfg;
            m.d_proj = dp;
            m.enc_params.assign(pv.begin(), pv.begin() + pe);
            m.proj_params.assign(pv.begin() + pe, pv.end());
            return m;
        };

        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            Rng shuffle_rng(derive_seed(cfg.seed, hash_str("pretrain_shuffle"),
                                        static_cast<uint64_t>(trial) * 10007 + static_cast<uint64_t>(epoch)));
            shuffle_rng.shuffle(order);
            double epoch_loss = 0.0;
            int steps = 0;
            for (int start = 0; start + 2 <= n; start += batch) {
                int bsz = std::min(batch, n - start);
                if (bsz < 2) break;
                std::span<const double> enc(params.data(), static_cast<size_t>(pe));
                std::vector<double> proj(params.begin() + pe, params.end());

                std::vector<net::ForwardCache> caches(static_cast<size_t>(bsz));
                std::vector<std::vector<double>> u_e(static_cast<size_t>(bsz)),
                    u_c(static_cast<size_t>(bsz));
                Mat z_e(bsz, dp), z_c(bsz, dp);
                parallel_for(bsz, cfg.threads, [&](int bi) {
                    const auto& s = train[static_cast<size_t>(order[static_cast<size_t>(start + bi)])];
                    (void)fnet.forward(enc, s, &caches[static_cast<size_t>(bi)]);
                    u_e[static_cast<size_t>(bi)].resize(static_cast<size_t>(dp));
                    u_c[static_cast<size_t>(bi)].resize(static_cast<size_t>(dp));
                    project(proj, d, dp, 0, caches[static_cast<size_t>(bi)].emb_ehr,
                            std::span<double>(z_e.row(bi), static_cast<size_t>(dp)),
                            u_e[static_cast<size_t>(bi)]);
                    project(proj, d, dp, 1, caches[static_cast<size_t>(bi)].emb_cxr,
                            std::span<double>(z_c.row(bi), static_cast<size_t>(dp)),
                            u_c[static_cast<size_t>(bi)]);
                });

                Mat dz_e, dz_c, dz_e2, dz_c2;
                double loss = info_nce_with_grad(z_e, z_c, cfg.temperature, &dz_e, &dz_c);
                loss += info_nce_with_grad(z_c, z_e, cfg.temperature, &dz_c2, &dz_e2);
                if (!std::isfinite(loss))
                    throw numeric_error("pretrain: contrastive loss is not finite at trial " +
                                        std::to_string(trial) + ", epoch " + std::to_string(epoch));
                for (size_t i = 0; i < dz_e.v.size(); ++i) dz_e.v[i] += dz_e2.v[i];
                for (size_t i = 0; i < dz_c.v.size(); ++i) dz_c.v[i] += dz_c2.v[i];

                std::vector<std::vector<double>> grads(static_cast<size_t>(bsz));
                parallel_for(bsz, cfg.threads, [&](int bi) {
                    auto& g = grads[static_cast<size_t>(bi)];
                    g.assign(static_cast<size_t>(pe + pp), 0.0);
                    std::vector<double> de(static_cast<size_t>(d), 0.0), dc(static_cast<size_t>(d), 0.0);
                    std::span<double> gp(g.data() + pe, static_cast<size_t>(pp));
                    project_backward(proj, d, dp, 0, caches[static_cast<size_t>(bi)].emb_ehr,
                                     u_e[static_cast<size_t>(bi)],
                                     std::span<const double>(dz_e.row(bi), static_cast<size_t>(dp)),
                                     de, gp);
                    project_backward(proj, d, dp, 1, caches[static_cast<size_t>(bi)].emb_cxr,
                                     u_c[static_cast<size_t>(bi)],
                                     std::span<const double>(dz_c.row(bi), static_cast<size_t>(dp)),
                                     dc, gp);
                    fnet.backward(enc, caches[static_cast<size_t>(bi)], 0.0, de, dc,
                                  std::span<double>(g.data(), static_cast<size_t>(pe)));
                });
                std::vector<double> grad(static_cast<size_t>(pe + pp), 0.0);
                for (int bi = 0; bi < bsz; ++bi)  // fixed reduction order
                    for (size_t i = 0; i < grad.size(); ++i) grad[i] += grads[static_cast<size_t>(bi)][i];

                opt::adam_step(params, grad, adam, lr);
                epoch_loss += loss;
                ++steps;
            }
            trial_losses.push_back(steps > 0 ? epoch_loss / steps : 0.0);

            double acc = val.empty() ? -trial_losses.back()
                                     : retrieval_accuracy(embed(model_of(params), val, cfg.threads));
            if (acc > trial_best_acc) {
                trial_best_acc = acc;
                trial_best_params = params;
            }
        }

        if (trial_best_acc > best.best_val_retrieval) {
            best.best_val_retrieval = trial_best_acc;
            best.model = model_of(trial_best_params);
            best.chosen_lr = lr;
            best.loss_history = trial_losses;
        }
    }
    return best;
}

void save_embeddings(const EmbeddingSet& emb, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot write " + path);
    for (size_t i = 0; i < emb.ids.size(); ++i) {
        std::string line = "{\"id\":\"" + emb.ids[i] + "\",\"phi_ehr\":[";
        for (int j = 0; j < emb.phi_ehr.cols; ++j) {
            if (j) line += ',';
            line += fmt_double(emb.phi_ehr(static_cast<int>(i), j));
        }
        line += "],\"phi_cxr\":[";
        for (int j = 0; j < emb.phi_cxr.cols; ++j) {
            if (j) line += ',';
            line += fmt_double(emb.phi_cxr(static_cast<int>(i), j));
        }
        line += "]}\n";
        out << line;
    }
}

EmbeddingSet load_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot read " + path);
    std::vector<std::string> ids;
    std::vector<std::vector<double>> ehr, cxr;
    std::string text;
    int line_no = 0;
    while (std::getline(in, text)) {
        ++line_no;
        if (text.empty()) continue;
        try {
            auto j = nlohmann::json::parse(text);
            ids.push_back(j.at("id").get<std::string>());
            ehr.push_back(j.at("phi_ehr").get<std::vector<double>>());
            cxr.push_back(j.at("phi_cxr").get<std::vector<double>>());
        } catch (const nlohmann::json::exception& e) {
            throw parse_error(path + ": line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    EmbeddingSet out;
    out.ids = std::move(ids);
    int n = static_cast<int>(out.ids.size());
    int dp = n > 0 ? static_cast<int>(ehr[0].size()) : 0;
    out.phi_ehr = Mat(n, dp);
    out.phi_cxr = Mat(n, dp);
    for (int i = 0; i < n; ++i) {
        if (static_cast<int>(ehr[static_cast<size_t>(i)].size()) != dp ||
            static_cast<int>(cxr[static_cast<size_t>(i)].size()) != dp)
            throw parse_error(path + ": inconsistent embedding widths");
        for (int j = 0; j < dp; ++j) {
            out.phi_ehr(i, j) = ehr[static_cast<size_t>(i)][static_cast<size_t>(j)];
            out.phi_cxr(i, j) = cxr[static_cast<size_t>(i)][static_cast<size_t>(j)];
        }
    }
    return out;
}

void save_convirt(const ConvirtModel& model, const std::string& path) {
    nlohmann::ordered_json header;
    header["format"] = "certain-convirt";
    header["version"] = 1;
    header["net"] = {{"T", model.net_cfg.t},     {"F", model.net_cfg.f},
                     {"H", model.net_cfg.h},     {"W", model.net_cfg.w},
                     {"d_embed", model.net_cfg.d_embed}, {"conv1", model.net_cfg.conv1},
                     {"conv2", model.net_cfg.conv2}};
    header["d_proj"] = model.d_proj;
    header["enc_count"] = model.enc_params.size();
    header["proj_count"] = model.proj_params.size();
    header["byte_order"] = "le";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot write " + path);
    out << header.dump() << '\n';
    out.write(reinterpret_cast<const char*>(model.enc_params.data()),
              static_cast<std::streamsize>(model.enc_params.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(model.proj_params.data()),
              static_cast<std::streamsize>(model.proj_params.size() * sizeof(double)));
}

ConvirtModel load_convirt(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot read " + path);
    std::string header_line;
    if (!std::getline(in, header_line)) throw parse_error(path + ": missing header");
    ConvirtModel m;
    try {
        auto h = nlohmann::json::parse(header_line);
        if (h.at("format").get<std::string>() != "certain-convirt")
            throw parse_error(path + ": unknown format tag");
        m.net_cfg.t = h.at("net").at("T").get<int>();
        m.net_cfg.f = h.at("net").at("F").get<int>();
        m.net_cfg.h = h.at("net").at("H").get<int>();
        m.net_cfg.w = h.at("net").at("W").get<int>();
        m.net_cfg.d_embed = h.at("net").at("d_embed").get<int>();
        m.net_cfg.conv1 = h.at("net").at("conv1").get<int>();
        m.net_cfg.conv2 = h.at("net").at("conv2").get<int>();
        m.d_proj = h.at("d_proj").get<int>();
        m.enc_params.resize(h.at("enc_count").get<size_t>());
        m.proj_params.resize(h.at("proj_count").get<size_t>());
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(path + ": bad header: " + e.what());
    }
    in.read(reinterpret_cast<char*>(m.enc_params.data()),
            static_cast<std::streamsize>(m.enc_params.size() * sizeof(double)));
    in.read(reinterpret_cast<char*>(m.proj_params.data()),
            static_cast<std::streamsize>(m.proj_params.size() * sizeof(double)));
    if (!in) throw parse_error(path + ": truncated parameter blocks");
    return m;
}

}  // namespace certain::contrastive
