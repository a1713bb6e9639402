#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vad/errors.hpp"
#include "vad/media_ingest.hpp"
#include "vad/optical_flow.hpp"
#include "vad/pair_types.hpp"
#include "vad/parallel.hpp"
#include "vad/patch_grid.hpp"
#include "vad/rng.hpp"
#include "vad/siamese_net.hpp"

namespace vad {

// Mean absolute elementwise difference between two preprocessed patches.
inline double normalized_l1(const PatchTensor& a, const PatchTensor& b) {
    double sum = 0.0;
    for (int i = 0; i < PatchTensor::kValues; ++i)
        sum += std::fabs(static_cast<double>(a.v[static_cast<std::size_t>(i)]) -
                         static_cast<double>(b.v[static_cast<std::size_t>(i)]));
    return sum / static_cast<double>(PatchTensor::kValues);
}

// mu + alpha * sigma over nearest-neighbor distances (population std dev).
struct AdaptiveThreshold {
    double mu = 0.0;
    double sigma = 0.0;
    double alpha = 0.2;

    double value() const { return mu + alpha * sigma; }
};

inline AdaptiveThreshold fit_threshold(std::span<const double> nn_distances, double alpha = 0.2) {
    if (nn_distances.empty()) raise(ErrorKind::InvalidInput, "fit_threshold: empty distance list");
    double mu = 0.0;
    for (double d : nn_distances) mu += d;
    mu /= static_cast<double>(nn_distances.size());
    double var = 0.0;
    for (double d : nn_distances) var += (d - mu) * (d - mu);
    var /= static_cast<double>(nn_distances.size());
    return {mu, std::sqrt(var), alpha};
}

// A gated-in patch at preprocessed scale, with enough provenance for the
// deterministic tie-break (sequence_id, frame).
struct RegionPatch {
    PatchTensor tensor;
    int seq_index = 0;
    int frame = 0;
    float anomaly_overlap = 0.0f; // fraction of the footprint inside the GT mask
};

struct NnResult {
    std::size_t index = 0;
    double distance = 0.0;
};

// Exact linear-scan argmin of normalized_l1; ties break toward the lowest
// (sequence_id, frame).
inline NnResult nn_over_train(const PatchTensor& query, std::span<const RegionPatch> train_patches,
                              std::span<const std::string> sequence_ids) {
    if (train_patches.empty()) raise(ErrorKind::EmptyRegion, "nn_over_train: region has no train patches");
    NnResult best{0, std::numeric_limits<double>::infinity()};
    for (std::size_t i = 0; i < train_patches.size(); ++i) {
        double d = normalized_l1(query, train_patches[i].tensor);
        if (d < best.distance) {
            best = {i, d};
        } else if (d == best.distance) {
            const RegionPatch& cur = train_patches[i];
            const RegionPatch& prev = train_patches[best.index];
            auto key = [&](const RegionPatch& p) {
                return std::pair<const std::string&, int>(sequence_ids[static_cast<std::size_t>(p.seq_index)],
                                                          p.frame);
            };
            if (key(cur) < key(prev)) best = {i, d};
        }
    }
    return best;
}

// ---- gated patch extraction -------------------------------------------------

struct ExtractedPatches {
    RegionGrid grid;
    std::vector<std::string> sequence_ids;
    std::vector<std::vector<RegionPatch>> by_region; // (seq, frame) order within a region
};

struct ExtractionParams {
    MotionGateParams gate;
    FlowParams flow;
    PreprocessParams preprocess;
    double anomaly_overlap_min = 0.5; // footprint fraction that makes a test patch anomalous
};

inline ExtractedPatches extract_gated_patches(const DatasetPartition& part,
                                              const ExtractionParams& params) {
    if (part.sequences.empty()) raise(ErrorKind::InvalidInput, "empty partition");
    ExtractedPatches out;
    out.grid = build_grid(part.sequences[0].width, part.sequences[0].height);
    out.by_region.resize(out.grid.region_count());
    for (std::size_t s = 0; s < part.sequences.size(); ++s) {
        const FrameSequence& seq = part.sequences[s];
        out.sequence_ids.push_back(seq.sequence_id);
        if (seq.width != out.grid.frame_w || seq.height != out.grid.frame_h)
            raise(ErrorKind::InvalidInput, "sequence dimensions differ within the partition");
        if (seq.frame_count() < ChannelStack::kTemporalDepth)
            raise(ErrorKind::InvalidInput, "sequence " + seq.sequence_id + " shorter than 7 frames");
        const std::vector<Image>* masks =
            part.has_masks(s) ? &part.pixel_masks[s] : nullptr;
        ComputedFlowSource flows(seq, params.flow);
        int last_anchor = static_cast<int>(seq.frame_count()) - ChannelStack::kTemporalDepth;
        for (int t = 0; t <= last_anchor; ++t) {
            ChannelStack stack = build_channel_stack(seq, t, flows, params.flow.motion_planes);
            for (std::size_t r = 0; r < out.grid.region_count(); ++r) {
                VideoPatch patch = extract_patch(stack, out.grid, static_cast<int>(r));
                GateDecision gate;
                if (t > 0) {
                    auto prev = gray_window(seq.frames[static_cast<std::size_t>(t - 1)], out.grid,
                                            static_cast<int>(r));
                    gate = motion_gate(patch, params.gate, prev.data());
                } else {
                    gate = motion_gate(patch, params.gate, nullptr);
                }
                if (gate == GateDecision::Skip) continue;
                RegionPatch rp;
                rp.tensor = preprocess(patch, params.preprocess);
                rp.seq_index = static_cast<int>(s);
                rp.frame = t;
                if (masks != nullptr) {
                    const Image& mask = (*masks)[static_cast<std::size_t>(t)];
                    auto [ox, oy] = out.grid.offsets[r];
                    int inside = 0;
                    for (int y = 0; y < VideoPatch::kH; ++y)
                        for (int x = 0; x < VideoPatch::kW; ++x)
                            if (mask.at(ox + x, oy + y) > 0.0f) ++inside;
                    rp.anomaly_overlap =
                        static_cast<float>(inside) / (VideoPatch::kH * VideoPatch::kW);
                }
                out.by_region[r].push_back(std::move(rp));
            }
        }
    }
    return out;
}

// ---- curation -----------------------------------------------------------------

struct CurationConfig {
    std::size_t target_per_class = 2000;
    int negative_cap = 8; // dissimilar partners per anomalous patch, NN included
    double alpha = 0.2;
    int self_translation_max = 2;      // px, each axis
    double self_scale_min = 0.85;      // central scale range for self pairs
    double self_scale_max = 1.0;
    double anomaly_overlap_min = 0.5;
    std::uint64_t seed = 1;
    MotionGateParams gate;
    FlowParams flow;
    PreprocessParams preprocess;
};

struct SourceData {
    std::string name;
    DatasetPartition train;
    DatasetPartition test;
};

struct CurationResult {
    std::vector<PairExample> pairs;
    double similar_threshold = 0.0;
    double dissimilar_threshold = 0.0;
    std::size_t n_similar = 0;
    std::size_t n_dissimilar = 0;
    std::size_t n_nn_match = 0;
    std::size_t n_hard_negative = 0;
    std::size_t n_sampled_negative = 0;
    std::size_t n_self_augmented = 0;
    std::size_t skipped_empty_regions = 0;
};

namespace detail {

// translate with clamped borders, then central scale; used for self pairs
inline PatchTensor self_augment_copy(const PatchTensor& src, int dx, int dy, double scale) {
    PatchTensor out;
    for (int c = 0; c < VideoPatch::kC; ++c)
        for (int y = 0; y < VideoPatch::kH; ++y)
            for (int x = 0; x < VideoPatch::kW; ++x) {
                int sx = std::clamp(x - dx, 0, VideoPatch::kW - 1);
                int sy = std::clamp(y - dy, 0, VideoPatch::kH - 1);
                out.at(c, y, x) = src.at(c, sy, sx);
            }
    if (scale != 1.0) {
        AugmentParams ap;
        ap.flip = false;
        ap.scale = scale;
        ap.brightness = 0.0;
        apply_augment(out, ap);
    }
    return out;
}

} // namespace detail

// Builds the balanced similar/dissimilar pair set from labeled sources.
// Per-region adaptive thresholds pool into one value per class across sources;
// the similar-class value admits nn_match pairs, the dissimilar-class value is
// the minimum NN distance an anomalous patch needs before it produces
// negatives.
inline CurationResult curate_pairs(const std::vector<SourceData>& sources, const CurationConfig& cfg) {
    if (sources.empty()) raise(ErrorKind::InvalidInput, "curate_pairs: no sources");

    struct TestPatchNn {
        int source = 0;
        int region = 0;
        std::size_t test_index = 0;
        std::size_t nn_index = 0;
        double nn_distance = 0.0;
        bool anomalous = false;
    };

    ExtractionParams ex;
    ex.gate = cfg.gate;
    ex.flow = cfg.flow;
    ex.preprocess = cfg.preprocess;
    ex.anomaly_overlap_min = cfg.anomaly_overlap_min;

    std::vector<ExtractedPatches> train_ex, test_ex;
    for (const auto& src : sources) {
        if (src.train.role != PartitionRole::Train || src.test.role != PartitionRole::Test)
            raise(ErrorKind::InvalidInput, "curate_pairs: source partitions mislabeled");
        train_ex.push_back(extract_gated_patches(src.train, ex));
        test_ex.push_back(extract_gated_patches(src.test, ex));
        if (!(train_ex.back().grid == test_ex.back().grid))
            raise(ErrorKind::InvalidInput, "curate_pairs: train/test grids differ for source " + src.name);
    }

    CurationResult result;
    std::vector<TestPatchNn> matches;
    std::vector<double> similar_region_thresholds, dissimilar_region_thresholds;

    for (std::size_t si = 0; si < sources.size(); ++si) {
        const auto& tr = train_ex[si];
        const auto& te = test_ex[si];
        for (std::size_t r = 0; r < te.grid.region_count(); ++r) {
            const auto& train_patches = tr.by_region[r];
            const auto& test_patches = te.by_region[r];
            if (test_patches.empty()) continue;
            if (train_patches.empty()) {
                result.skipped_empty_regions++;
                continue;
            }
            std::vector<NnResult> nn(test_patches.size());
            Parallel::for_each(test_patches.size(), [&](std::size_t i) {
                nn[i] = nn_over_train(test_patches[i].tensor, train_patches, tr.sequence_ids);
            });
            std::vector<double> sim_d, dis_d;
            for (std::size_t i = 0; i < test_patches.size(); ++i) {
                bool anomalous =
                    test_patches[i].anomaly_overlap >= static_cast<float>(cfg.anomaly_overlap_min);
                matches.push_back({static_cast<int>(si), static_cast<int>(r), i, nn[i].index,
                                   nn[i].distance, anomalous});
                (anomalous ? dis_d : sim_d).push_back(nn[i].distance);
            }
            if (!sim_d.empty())
                similar_region_thresholds.push_back(fit_threshold(sim_d, cfg.alpha).value());
            if (!dis_d.empty())
                dissimilar_region_thresholds.push_back(fit_threshold(dis_d, cfg.alpha).value());
        }
    }

    if (dissimilar_region_thresholds.empty())
        raise(ErrorKind::Curation,
              "no anomalous test patches in any source; cannot form the dissimilar class");
    if (similar_region_thresholds.empty())
        raise(ErrorKind::Curation, "no non-anomalous test patches in any source");

    auto mean_of = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    result.similar_threshold = mean_of(similar_region_thresholds);
    result.dissimilar_threshold = mean_of(dissimilar_region_thresholds);

    Rng root(cfg.seed);
    Rng sample_rng = root.fork(1);
    Rng self_rng = root.fork(2);
    Rng balance_rng = root.fork(3);
    Rng shuffle_rng = root.fork(4);

    std::vector<PairExample> similar, dissimilar;
    for (const auto& m : matches) {
        const auto& tr = train_ex[static_cast<std::size_t>(m.source)];
        const auto& te = test_ex[static_cast<std::size_t>(m.source)];
        const auto& train_patches = tr.by_region[static_cast<std::size_t>(m.region)];
        const auto& test_patch = te.by_region[static_cast<std::size_t>(m.region)][m.test_index];
        if (!m.anomalous) {
            if (m.nn_distance <= result.similar_threshold) {
                PairExample p;
                p.patch_a = test_patch.tensor;
                p.patch_b = train_patches[m.nn_index].tensor;
                p.label = 0;
                p.provenance = PairProvenance::NnMatch;
                p.pre_distance = static_cast<float>(m.nn_distance);
                similar.push_back(std::move(p));
            }
            continue;
        }
        if (m.nn_distance < result.dissimilar_threshold) continue; // too close to normal video
        PairExample hard;
        hard.patch_a = test_patch.tensor;
        hard.patch_b = train_patches[m.nn_index].tensor;
        hard.label = 1;
        hard.provenance = PairProvenance::HardNegative;
        hard.pre_distance = static_cast<float>(m.nn_distance);
        dissimilar.push_back(std::move(hard));
        int emitted = 1;
        for (std::size_t i = 0; i < train_patches.size() && emitted < cfg.negative_cap; ++i) {
            if (i == m.nn_index) continue;
            double d = normalized_l1(test_patch.tensor, train_patches[i].tensor);
            double accept = d <= 0.0 ? 1.0 : std::min(1.0, m.nn_distance / d);
            if (!sample_rng.bernoulli(accept)) continue;
            PairExample p;
            p.patch_a = test_patch.tensor;
            p.patch_b = train_patches[i].tensor;
            p.label = 1;
            p.provenance = PairProvenance::SampledNegative;
            p.pre_distance = static_cast<float>(d);
            dissimilar.push_back(std::move(p));
            ++emitted;
        }
    }

    // class capping and balancing: equal final counts
    auto subsample = [&](std::vector<PairExample>& v, std::size_t target, Rng& rng) {
        if (v.size() <= target) return;
        std::vector<std::size_t> idx(v.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        rng.shuffle(idx);
        idx.resize(target);
        std::sort(idx.begin(), idx.end());
        std::vector<PairExample> kept;
        kept.reserve(target);
        for (std::size_t i : idx) kept.push_back(std::move(v[i]));
        v = std::move(kept);
    };
    subsample(dissimilar, cfg.target_per_class, balance_rng);
    subsample(similar, std::min(cfg.target_per_class, dissimilar.size()), balance_rng);

    // pool of train patches for self-augmented positives
    std::vector<std::pair<int, std::pair<int, std::size_t>>> train_pool; // (source, (region, idx))
    for (std::size_t si = 0; si < sources.size(); ++si)
        for (std::size_t r = 0; r < train_ex[si].by_region.size(); ++r)
            for (std::size_t i = 0; i < train_ex[si].by_region[r].size(); ++i)
                train_pool.push_back({static_cast<int>(si), {static_cast<int>(r), i}});

    if (similar.size() < dissimilar.size()) {
        if (train_pool.empty()) {
            subsample(dissimilar, similar.size(), balance_rng);
        } else {
            while (similar.size() < dissimilar.size()) {
                auto pick = train_pool[self_rng.below(train_pool.size())];
                const RegionPatch& rp =
                    train_ex[static_cast<std::size_t>(pick.first)]
                        .by_region[static_cast<std::size_t>(pick.second.first)][pick.second.second];
                int dx = static_cast<int>(self_rng.range_int(-cfg.self_translation_max, cfg.self_translation_max));
                int dy = static_cast<int>(self_rng.range_int(-cfg.self_translation_max, cfg.self_translation_max));
                double s = self_rng.uniform(cfg.self_scale_min, cfg.self_scale_max);
                PairExample p;
                p.patch_a = rp.tensor;
                p.patch_b = detail::self_augment_copy(rp.tensor, dx, dy, s);
                p.label = 0;
                p.provenance = PairProvenance::SelfAugmented;
                p.pre_distance = std::numeric_limits<float>::quiet_NaN();
                similar.push_back(std::move(p));
            }
        }
    } else if (similar.size() > dissimilar.size()) {
        subsample(similar, dissimilar.size(), balance_rng);
    }

    for (const auto& p : similar) {
        result.n_nn_match += p.provenance == PairProvenance::NnMatch ? 1 : 0;
        result.n_self_augmented += p.provenance == PairProvenance::SelfAugmented ? 1 : 0;
    }
    for (const auto& p : dissimilar) {
        result.n_hard_negative += p.provenance == PairProvenance::HardNegative ? 1 : 0;
        result.n_sampled_negative += p.provenance == PairProvenance::SampledNegative ? 1 : 0;
    }
    result.n_similar = similar.size();
    result.n_dissimilar = dissimilar.size();

    result.pairs.reserve(similar.size() + dissimilar.size());
    for (auto& p : similar) result.pairs.push_back(std::move(p));
    for (auto& p : dissimilar) result.pairs.push_back(std::move(p));
    shuffle_rng.shuffle(result.pairs);
    return result;
}

} // namespace vad
