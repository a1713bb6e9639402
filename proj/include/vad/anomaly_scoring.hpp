#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <string>
#include <vector>

#include "vad/binio.hpp"
#include "vad/errors.hpp"
#include "vad/exemplar_model.hpp"
#include "vad/image.hpp"
#include "vad/media_ingest.hpp"
#include "vad/pair_types.hpp"
#include "vad/patch_grid.hpp"
#include "vad/png_io.hpp"

namespace vad {

// Per-pixel, per-frame anomaly scores for the scoreable anchors 0..last-6.
struct ScoreVolume {
    std::vector<Image> maps; // one per scoreable frame, values in [0, 1]

    std::size_t frame_count() const { return maps.size(); }
    int width() const { return maps.empty() ? 0 : maps[0].width(); }
    int height() const { return maps.empty() ? 0 : maps[0].height(); }
};

enum class TemporalMode {
    AnchorOnly, // a patch at anchor t contributes to frame t
    Spread,     // contributions spread over frames t..t+6 (clipped to scoreable range)
};

struct ScoringParams {
    MotionGateParams gate;
    FlowParams flow;
    PreprocessParams preprocess;
    TemporalMode temporal = TemporalMode::AnchorOnly;
};

// Scores one test sequence against the exemplar model: gated-in patches get
// the nearest-exemplar distance (1.0 for regions with no exemplars), each
// score accumulates over the patch's 20x20 footprint, and pixels average
// their received scores (uncovered pixels stay 0).
inline ScoreVolume score_sequence(const FrameSequence& seq, const ExemplarModel& exemplars,
                                  const LoadedSiamese& siamese, const RegionGrid& grid,
                                  const ScoringParams& params) {
    if (exemplars.model_fingerprint != siamese.fingerprint)
        raise(ErrorKind::Configuration, "score_sequence: exemplar/model fingerprint mismatch");
    if (!(grid == exemplars.grid))
        raise(ErrorKind::Configuration, "score_sequence: grid does not match the exemplar file");
    if (seq.width != grid.frame_w || seq.height != grid.frame_h)
        raise(ErrorKind::Configuration, "score_sequence: sequence dimensions do not match the grid");
    if (seq.frame_count() < ChannelStack::kTemporalDepth)
        raise(ErrorKind::InvalidInput, "score_sequence: sequence shorter than 7 frames");

    int n_frames = static_cast<int>(seq.frame_count()) - (ChannelStack::kTemporalDepth - 1);
    ScoreVolume vol;
    vol.maps.assign(static_cast<std::size_t>(n_frames), Image(seq.width, seq.height, 0.0f));
    std::vector<Image> counts(static_cast<std::size_t>(n_frames), Image(seq.width, seq.height, 0.0f));

    HeadScanContext ctx(siamese.model);
    ComputedFlowSource flows(seq, params.flow);
    int dim = siamese.model.arch.embedding_dim();

    struct Scored {
        int anchor;
        int region_id;
        double score;
    };
    std::vector<Scored> scored;

    struct Pending {
        int anchor;
        int region_id;
        PatchTensor tensor;
    };
    constexpr std::size_t kBlock = 256;
    std::vector<Pending> block;
    nn::Vec embeddings;
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
            const ExemplarSet& set = exemplars.regions[static_cast<std::size_t>(block[i].region_id)];
            auto nn_hit = nearest_exemplar(set, ctx, f);
            double s = nn_hit ? nn_hit->distance : 1.0; // no normal evidence => maximal score
            scored.push_back({block[i].anchor, block[i].region_id, s});
        }
        block.clear();
    };

    for (int t = 0; t < n_frames; ++t) {
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
            if (gate == GateDecision::Skip) continue;
            block.push_back({t, static_cast<int>(r), preprocess(patch, params.preprocess)});
            if (block.size() >= kBlock) flush();
        }
    }
    flush();

    // deterministic accumulation in (anchor, region) emission order
    for (const auto& sc : scored) {
        auto [ox, oy] = grid.offsets[static_cast<std::size_t>(sc.region_id)];
        int f_begin = sc.anchor;
        int f_end = params.temporal == TemporalMode::Spread
                        ? std::min(sc.anchor + ChannelStack::kTemporalDepth - 1, n_frames - 1)
                        : sc.anchor;
        for (int f = f_begin; f <= f_end; ++f) {
            Image& m = vol.maps[static_cast<std::size_t>(f)];
            Image& c = counts[static_cast<std::size_t>(f)];
            for (int y = 0; y < VideoPatch::kH; ++y)
                for (int x = 0; x < VideoPatch::kW; ++x) {
                    m.at(ox + x, oy + y) += static_cast<float>(sc.score);
                    c.at(ox + x, oy + y) += 1.0f;
                }
        }
    }
    for (int f = 0; f < n_frames; ++f) {
        Image& m = vol.maps[static_cast<std::size_t>(f)];
        const Image& c = counts[static_cast<std::size_t>(f)];
        for (int y = 0; y < seq.height; ++y)
            for (int x = 0; x < seq.width; ++x)
                if (c.at(x, y) > 0.0f) m.at(x, y) /= c.at(x, y);
    }
    return vol;
}

// Per-frame scalar series: the maximum pixel score of each frame.
inline std::vector<double> frame_scores(const ScoreVolume& vol) {
    std::vector<double> out(vol.frame_count(), 0.0);
    for (std::size_t f = 0; f < vol.frame_count(); ++f) {
        const Image& m = vol.maps[f];
        float best = 0.0f;
        for (int y = 0; y < m.height(); ++y)
            for (int x = 0; x < m.width(); ++x) best = std::max(best, m.at(x, y));
        out[f] = best;
    }
    return out;
}

// One detected connected component (8-connectivity).
struct DetectionRegion {
    Box bbox;
    std::vector<std::pair<int, int>> pixels; // (x, y)
};

// Connected components of {score >= tau} per frame, 8-connected, discovered
// in row-major order.
inline std::vector<DetectionRegion> connected_components(const Image& map, double tau) {
    int w = map.width(), h = map.height();
    std::vector<char> visited(static_cast<std::size_t>(w) * h, 0);
    auto detected = [&](int x, int y) { return static_cast<double>(map.at(x, y)) >= tau; };
    std::vector<DetectionRegion> regions;
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            std::size_t idx = static_cast<std::size_t>(y) * w + x;
            if (visited[idx] || !detected(x, y)) continue;
            DetectionRegion region;
            int min_x = x, max_x = x, min_y = y, max_y = y;
            visited[idx] = 1;
            queue.push_back({x, y});
            while (!queue.empty()) {
                auto [cx, cy] = queue.front();
                queue.pop_front();
                region.pixels.push_back({cx, cy});
                min_x = std::min(min_x, cx);
                max_x = std::max(max_x, cx);
                min_y = std::min(min_y, cy);
                max_y = std::max(max_y, cy);
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dx == 0 && dy == 0) continue;
                        int nx = cx + dx, ny = cy + dy;
                        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                        std::size_t nidx = static_cast<std::size_t>(ny) * w + nx;
                        if (!visited[nidx] && detected(nx, ny)) {
                            visited[nidx] = 1;
                            queue.push_back({nx, ny});
                        }
                    }
            }
            region.bbox = {min_x, min_y, max_x - min_x + 1, max_y - min_y + 1};
            regions.push_back(std::move(region));
        }
    }
    return regions;
}

struct FrameDetections {
    std::vector<DetectionRegion> regions;
};

// Pixel detected iff score >= tau; returns per-frame connected regions.
inline std::vector<FrameDetections> threshold_detections(const ScoreVolume& vol, double tau) {
    std::vector<FrameDetections> out(vol.frame_count());
    for (std::size_t f = 0; f < vol.frame_count(); ++f)
        out[f].regions = connected_components(vol.maps[f], tau);
    return out;
}

// ---- large-error report -----------------------------------------------------

struct LargeErrorEntry {
    std::size_t pair_index = 0;
    double p = 0.0;
    std::uint8_t label = 0;
    double error = 0.0; // |y - p|
};

// Pairs the trained network gets most wrong: |y - p| >= error_floor, ranked
// descending, capped at top_k.
inline std::vector<LargeErrorEntry> rank_large_errors(const std::vector<PairExample>& pairs,
                                                      const SiameseModel& model, std::size_t top_k,
                                                      double error_floor = 0.5) {
    std::vector<LargeErrorEntry> all;
    all.reserve(pairs.size());
    constexpr std::size_t kBlock = 128;
    int dim = model.arch.embedding_dim();
    for (std::size_t start = 0; start < pairs.size(); start += kBlock) {
        std::size_t count = std::min(kBlock, pairs.size() - start);
        std::vector<float> stacked(2 * count * PatchTensor::kValues);
        for (std::size_t i = 0; i < count; ++i) {
            std::copy(pairs[start + i].patch_a.v.begin(), pairs[start + i].patch_a.v.end(),
                      stacked.begin() + static_cast<std::ptrdiff_t>(i * PatchTensor::kValues));
            std::copy(pairs[start + i].patch_b.v.begin(), pairs[start + i].patch_b.v.end(),
                      stacked.begin() + static_cast<std::ptrdiff_t>((count + i) * PatchTensor::kValues));
        }
        nn::Vec emb;
        embed_batch(model, stacked.data(), static_cast<int>(2 * count), emb);
        for (std::size_t i = 0; i < count; ++i) {
            nn::Vec diff(static_cast<std::size_t>(dim));
            for (int j = 0; j < dim; ++j)
                diff[static_cast<std::size_t>(j)] = emb[i * dim + static_cast<std::size_t>(j)] -
                                                    emb[(count + i) * dim + static_cast<std::size_t>(j)];
            double p = head_distance(model, diff);
            double err = std::fabs(static_cast<double>(pairs[start + i].label) - p);
            if (err >= error_floor)
                all.push_back({start + i, p, pairs[start + i].label, err});
        }
    }
    std::stable_sort(all.begin(), all.end(), [](const LargeErrorEntry& a, const LargeErrorEntry& b) {
        return a.error > b.error;
    });
    if (all.size() > top_k) all.resize(top_k);
    return all;
}

// Renders the 13 channels of both patches as a 2-row tile grid, [-1,1] mapped
// to [0,255].
inline Image render_pair_grid(const PairExample& pair) {
    constexpr int kTile = VideoPatch::kW, kGap = 2;
    int w = VideoPatch::kC * (kTile + kGap) - kGap;
    int h = 2 * kTile + kGap;
    Image img(w, h, 32.0f);
    auto blit = [&](const PatchTensor& t, int row) {
        for (int c = 0; c < VideoPatch::kC; ++c)
            for (int y = 0; y < VideoPatch::kH; ++y)
                for (int x = 0; x < VideoPatch::kW; ++x) {
                    float v = (t.at(c, y, x) + 1.0f) * 127.5f;
                    img.at(c * (kTile + kGap) + x, row * (kTile + kGap) + y) = v;
                }
    };
    blit(pair.patch_a, 0);
    blit(pair.patch_b, 1);
    return img;
}

// ---- score volume file --------------------------------------------------------

// `VADS1`, u32 frame count, u32 width, u32 height, then per frame f32
// little-endian row-major scores.
inline void save_score_volume(const std::filesystem::path& path, const ScoreVolume& vol) {
    ByteWriter w;
    w.magic("VADS1");
    w.u32(static_cast<std::uint32_t>(vol.frame_count()));
    w.u32(static_cast<std::uint32_t>(vol.width()));
    w.u32(static_cast<std::uint32_t>(vol.height()));
    for (const auto& m : vol.maps) w.f32_array(m.data(), m.size());
    write_file_bytes(path, w.data());
}

inline ScoreVolume load_score_volume(const std::filesystem::path& path) {
    auto bytes = read_file_bytes(path);
    ByteReader r(bytes);
    r.expect_magic("VADS1", path.string());
    std::uint32_t frames = r.u32();
    int w = static_cast<int>(r.u32());
    int h = static_cast<int>(r.u32());
    if (w <= 0 || h <= 0) raise(ErrorKind::Format, path.string() + ": bad dimensions");
    ScoreVolume vol;
    vol.maps.assign(frames, Image(w, h));
    for (auto& m : vol.maps) r.f32_into(m.data(), m.size());
    if (!r.at_end()) raise(ErrorKind::Format, path.string() + ": trailing bytes");
    return vol;
}

inline void save_frame_scores_csv(const std::filesystem::path& path, const std::vector<double>& series) {
    std::string text = "frame,score\n";
    for (std::size_t f = 0; f < series.size(); ++f) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%zu,%.9g\n", f, series[f]);
        text += buf;
    }
    write_file_text(path, text);
}

// Detection overlay in the usual convention: ground-truth boxes green,
// detected regions red.
inline RgbImage render_overlay(const Image& frame, const std::vector<DetectionRegion>& detections,
                               const std::vector<Box>& gt_boxes) {
    RgbImage img = to_rgb(frame);
    for (const auto& det : detections)
        for (auto [x, y] : det.pixels) {
            std::size_t i = (static_cast<std::size_t>(y) * img.width + x) * 3;
            img.rgb[i] = static_cast<std::uint8_t>(std::min(255, img.rgb[i] / 2 + 160));
            img.rgb[i + 1] /= 2;
            img.rgb[i + 2] /= 2;
        }
    for (const auto& box : gt_boxes) {
        for (int x = box.x; x < box.x2(); ++x) {
            img.set(x, box.y, 0, 255, 0);
            img.set(x, box.y2() - 1, 0, 255, 0);
        }
        for (int y = box.y; y < box.y2(); ++y) {
            img.set(box.x, y, 0, 255, 0);
            img.set(box.x2() - 1, y, 0, 255, 0);
        }
    }
    return img;
}

} // namespace vad
