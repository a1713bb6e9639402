#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vad/binio.hpp"
#include "vad/errors.hpp"
#include "vad/media_ingest.hpp"
#include "vad/optical_flow.hpp"
#include "vad/patch_grid.hpp"
#include "vad/sha256.hpp"
#include "vad/siamese_net.hpp"

namespace vad {

// A Siamese model together with the fingerprint of its serialized file; the
// fingerprint chains model -> exemplars -> scores.
struct LoadedSiamese {
    SiameseModel model;
    Sha256::Digest fingerprint{};
};

inline LoadedSiamese load_siamese(const std::filesystem::path& path) {
    auto bytes = read_file_bytes(path);
    LoadedSiamese out;
    out.model = deserialize_model(bytes, path.string());
    out.fingerprint = Sha256::of(bytes);
    return out;
}

inline LoadedSiamese wrap_siamese(SiameseModel model) {
    LoadedSiamese out;
    auto bytes = serialize_model(model);
    out.fingerprint = Sha256::of(bytes);
    out.model = std::move(model);
    return out;
}

struct ExemplarEntry {
    std::vector<float> embedding; // 3200-d, f32 (the serialized precision)
    std::uint32_t seq_index = 0;
    std::uint32_t frame = 0;
};

// Region exemplars in insertion order, plus cached fc1 projections for scans.
struct ExemplarSet {
    int region_id = -1;
    std::vector<ExemplarEntry> exemplars;
    std::vector<std::vector<double>> projections; // aligned with exemplars

    std::size_t size() const { return exemplars.size(); }
};

struct RegionCounts {
    std::uint64_t offered = 0;
    std::uint64_t inserted = 0;
    std::uint64_t gated_out = 0;
};

struct ExemplarModel {
    Sha256::Digest model_fingerprint{};
    RegionGrid grid;
    double insert_threshold = 0.3;
    std::vector<ExemplarSet> regions; // one per grid region, id order
    std::vector<RegionCounts> counts;

    std::size_t total_exemplars() const {
        std::size_t n = 0;
        for (const auto& r : regions) n += r.size();
        return n;
    }
};

namespace detail {

inline std::vector<float> quantize_embedding(std::span<const double> f) {
    std::vector<float> q(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) q[i] = static_cast<float>(f[i]);
    return q;
}

} // namespace detail

struct InsertResult {
    bool inserted = false;
    double nearest_distance = 0.0; // distance to the nearest exemplar when rejected
};

// Greedy streaming insertion: a candidate joins the set iff the set is empty
// or its distance to every existing exemplar exceeds the threshold. The
// candidate is always evaluated as the first distance argument.
inline InsertResult try_insert(ExemplarSet& set, const HeadScanContext& ctx,
                               std::span<const double> f, double threshold) {
    std::vector<float> q = detail::quantize_embedding(f);
    std::vector<double> hq = ctx.project(q);
    double min_d = std::numeric_limits<double>::infinity();
    for (const auto& he : set.projections) {
        double d = ctx.distance(hq, he);
        if (d < min_d) min_d = d;
    }
    if (!set.exemplars.empty() && min_d <= threshold) return {false, min_d};
    ExemplarEntry e;
    e.embedding = std::move(q);
    set.exemplars.push_back(std::move(e));
    set.projections.push_back(std::move(hq));
    return {true, min_d};
}

struct NearestExemplar {
    double distance = 0.0;
    std::size_t index = 0;
};

// Exact linear scan; ties keep the lowest index. Empty sets return nullopt.
inline std::optional<NearestExemplar> nearest_exemplar(const ExemplarSet& set,
                                                       const HeadScanContext& ctx,
                                                       std::span<const double> f) {
    if (set.exemplars.empty()) return std::nullopt;
    std::vector<float> q = detail::quantize_embedding(f);
    std::vector<double> hq = ctx.project(q);
    NearestExemplar best{std::numeric_limits<double>::infinity(), 0};
    for (std::size_t i = 0; i < set.projections.size(); ++i) {
        double d = ctx.distance(hq, set.projections[i]);
        if (d < best.distance) best = {d, i};
    }
    return best;
}

struct ExemplarBuildParams {
    MotionGateParams gate;
    FlowParams flow;
    PreprocessParams preprocess;
    double insert_threshold = 0.3;
};

// Builds region exemplar sets from the train partition: sequences in load
// order, anchor frames 0..last-6, regions in grid order; motion-gated patches
// are embedded and offered via try_insert.
inline ExemplarModel build_exemplars(const DatasetPartition& train, const LoadedSiamese& siamese,
                                     const RegionGrid& grid, const ExemplarBuildParams& params) {
    HeadScanContext ctx(siamese.model);
    double p0 = zero_distance(siamese.model);
    if (!(p0 < params.insert_threshold))
        raise(ErrorKind::UnusableModel,
              "model zero-difference distance p0=" + std::to_string(p0) +
                  " is not below the insert threshold " + std::to_string(params.insert_threshold) +
                  "; every duplicate would count as unique");

    ExemplarModel out;
    out.model_fingerprint = siamese.fingerprint;
    out.grid = grid;
    out.insert_threshold = params.insert_threshold;
    out.regions.resize(grid.region_count());
    out.counts.resize(grid.region_count());
    for (std::size_t r = 0; r < grid.region_count(); ++r) out.regions[r].region_id = static_cast<int>(r);

    struct Pending {
        std::uint32_t seq_index;
        std::uint32_t frame;
        int region_id;
        PatchTensor tensor;
    };

    constexpr std::size_t kEmbedBlock = 256;
    std::vector<Pending> block;
    block.reserve(kEmbedBlock);
    nn::Vec embeddings;
    int dim = siamese.model.arch.embedding_dim();

    auto flush = [&] {
        if (block.empty()) return;
        std::vector<float> stacked(block.size() * PatchTensor::kValues);
        for (std::size_t i = 0; i < block.size(); ++i)
            std::copy(block[i].tensor.v.begin(), block[i].tensor.v.end(),
                      stacked.begin() + static_cast<std::ptrdiff_t>(i * PatchTensor::kValues));
        embed_batch(siamese.model, stacked.data(), static_cast<int>(block.size()), embeddings);
        for (std::size_t i = 0; i < block.size(); ++i) {
            std::span<const double> f(embeddings.data() + i * static_cast<std::size_t>(dim),
                                      static_cast<std::size_t>(dim));
            auto& set = out.regions[static_cast<std::size_t>(block[i].region_id)];
            InsertResult res = try_insert(set, ctx, f, params.insert_threshold);
            if (res.inserted) {
                set.exemplars.back().seq_index = block[i].seq_index;
                set.exemplars.back().frame = block[i].frame;
                out.counts[static_cast<std::size_t>(block[i].region_id)].inserted++;
            }
        }
        block.clear();
    };

    for (std::size_t s = 0; s < train.sequences.size(); ++s) {
        const FrameSequence& seq = train.sequences[s];
        if (seq.frame_count() < ChannelStack::kTemporalDepth)
            raise(ErrorKind::InvalidInput, "sequence " + seq.sequence_id + " has fewer than 7 frames");
        if (seq.width != grid.frame_w || seq.height != grid.frame_h)
            raise(ErrorKind::Configuration, "sequence dimensions do not match the region grid");
        ComputedFlowSource flows(seq, params.flow);
        int last_anchor = static_cast<int>(seq.frame_count()) - ChannelStack::kTemporalDepth;
        for (int t = 0; t <= last_anchor; ++t) {
            ChannelStack stack = build_channel_stack(seq, t, flows, params.flow.motion_planes);
            for (std::size_t r = 0; r < grid.region_count(); ++r) {
                VideoPatch patch = extract_patch(stack, grid, static_cast<int>(r));
                GateDecision gate;
                if (t > 0) {
                    auto prev = gray_window(seq.frames[static_cast<std::size_t>(t - 1)], grid,
                                            static_cast<int>(r));
                    gate = motion_gate(patch, params.gate, prev.data());
                } else {
                    gate = motion_gate(patch, params.gate, nullptr);
                }
                if (gate == GateDecision::Skip) {
                    out.counts[r].gated_out++;
                    continue;
                }
                out.counts[r].offered++;
                block.push_back({static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(t),
                                 static_cast<int>(r), preprocess(patch, params.preprocess)});
                if (block.size() >= kEmbedBlock) flush();
            }
        }
        flush(); // keep insertion order per sequence boundary
    }
    flush();
    return out;
}

// Exemplar file: magic `VADE1`, 32-byte model fingerprint, grid descriptor +
// insert threshold, u32 region count, then per region u32 count and exemplars
// as f32 3200-d vectors + (u32 seq index, u32 frame).
inline void save_exemplars(const std::filesystem::path& path, const ExemplarModel& em) {
    ByteWriter w;
    w.magic("VADE1");
    w.bytes(em.model_fingerprint.data(), em.model_fingerprint.size());
    w.u32(static_cast<std::uint32_t>(RegionGrid::kPatchH));
    w.u32(static_cast<std::uint32_t>(RegionGrid::kPatchW));
    w.u32(static_cast<std::uint32_t>(RegionGrid::kStrideH));
    w.u32(static_cast<std::uint32_t>(RegionGrid::kStrideW));
    w.u32(static_cast<std::uint32_t>(em.grid.frame_w));
    w.u32(static_cast<std::uint32_t>(em.grid.frame_h));
    w.f64(em.insert_threshold);
    w.u32(static_cast<std::uint32_t>(em.regions.size()));
    for (const auto& set : em.regions) {
        w.u32(static_cast<std::uint32_t>(set.exemplars.size()));
        for (const auto& e : set.exemplars) {
            w.f32_array(e.embedding.data(), e.embedding.size());
            w.u32(e.seq_index);
            w.u32(e.frame);
        }
    }
    write_file_bytes(path, w.data());
}

// Loads and re-projects against the supplied model; the fingerprint must match.
inline ExemplarModel load_exemplars(const std::filesystem::path& path, const LoadedSiamese& siamese) {
    auto bytes = read_file_bytes(path);
    ByteReader r(bytes);
    r.expect_magic("VADE1", path.string());
    ExemplarModel em;
    r.bytes(em.model_fingerprint.data(), em.model_fingerprint.size());
    if (em.model_fingerprint != siamese.fingerprint)
        raise(ErrorKind::ModelMismatch,
              path.string() + ": exemplar file was built from a different model file");
    std::uint32_t ph = r.u32(), pw = r.u32(), sh = r.u32(), sw = r.u32();
    if (ph != RegionGrid::kPatchH || pw != RegionGrid::kPatchW || sh != RegionGrid::kStrideH ||
        sw != RegionGrid::kStrideW)
        raise(ErrorKind::Format, path.string() + ": unexpected grid descriptor");
    int fw = static_cast<int>(r.u32());
    int fh = static_cast<int>(r.u32());
    em.grid = build_grid(fw, fh);
    em.insert_threshold = r.f64();
    std::uint32_t n_regions = r.u32();
    if (n_regions != em.grid.region_count())
        raise(ErrorKind::Format, path.string() + ": region count does not match the grid");
    HeadScanContext ctx(siamese.model);
    int dim = siamese.model.arch.embedding_dim();
    em.regions.resize(n_regions);
    em.counts.resize(n_regions);
    for (std::uint32_t i = 0; i < n_regions; ++i) {
        auto& set = em.regions[i];
        set.region_id = static_cast<int>(i);
        std::uint32_t count = r.u32();
        set.exemplars.resize(count);
        set.projections.reserve(count);
        for (auto& e : set.exemplars) {
            e.embedding.resize(static_cast<std::size_t>(dim));
            r.f32_into(e.embedding.data(), e.embedding.size());
            e.seq_index = r.u32();
            e.frame = r.u32();
            set.projections.push_back(ctx.project(e.embedding));
        }
    }
    if (!r.at_end()) raise(ErrorKind::Format, path.string() + ": trailing bytes");
    return em;
}

} // namespace vad
