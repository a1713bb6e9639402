#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vad/errors.hpp"
#include "vad/media_ingest.hpp"
#include "vad/rng.hpp"

namespace vad {

enum class SpriteShape { Square, Disc };

enum class AnomalyKind { FastMover, Oversized, NovelTrajectory };

struct AnomalySpec {
    AnomalyKind kind = AnomalyKind::FastMover;
    int frame_begin = 0; // inclusive span within the test sequence
    int frame_end = 0;   // inclusive
    double speed = 4.0;  // px/frame
    int size = 10;       // sprite side length
    float intensity = 220.0f;
};

// Deterministic scene description: identical spec + seed produce bit-identical
// frames and annotations.
struct SyntheticSceneSpec {
    int width = 64;
    int height = 64;
    int train_frames = 420;
    int test_frames = 360;

    int walker_count = 5;
    double walker_speed_min = 0.8;
    double walker_speed_max = 1.8;
    int walker_size = 8;
    float walker_intensity = 210.0f;
    SpriteShape walker_shape = SpriteShape::Square;
    std::vector<int> lanes; // fixed y positions for walkers; empty = random rows

    float background = 16.0f;
    float texture_amplitude = 0.0f; // static per-pixel background texture

    std::vector<AnomalySpec> anomalies; // injected into the test partition only
    std::uint64_t seed = 1;
};

// Position of a sprite bouncing between lo and hi (inclusive track ends).
inline double bounce_position(double start, double velocity, double t, double lo, double hi) {
    if (hi <= lo) return lo;
    double span = hi - lo;
    double period = 2.0 * span;
    double m = std::fmod(start - lo + velocity * t, period);
    if (m < 0) m += period;
    return lo + (m <= span ? m : period - m);
}

namespace detail {

struct Mover {
    double x0 = 0, y0 = 0;   // start position (top-left)
    double vx = 0, vy = 0;   // px/frame
    int size = 8;
    float intensity = 210.0f;
    SpriteShape shape = SpriteShape::Square;

    std::pair<double, double> position(int frame, int canvas_w, int canvas_h) const {
        double x = bounce_position(x0, vx, frame, 0.0, static_cast<double>(canvas_w - size));
        double y = bounce_position(y0, vy, frame, 0.0, static_cast<double>(canvas_h - size));
        return {x, y};
    }
};

// 4x4 supersampled coverage of the sprite over one pixel cell.
inline float sprite_coverage(const Mover& m, double px, double py, int x, int y) {
    double cx = px + m.size * 0.5, cy = py + m.size * 0.5, r = m.size * 0.5;
    int hit = 0;
    for (int sy = 0; sy < 4; ++sy) {
        for (int sx = 0; sx < 4; ++sx) {
            double qx = x + (sx + 0.5) / 4.0;
            double qy = y + (sy + 0.5) / 4.0;
            bool inside;
            if (m.shape == SpriteShape::Square) {
                inside = qx >= px && qx < px + m.size && qy >= py && qy < py + m.size;
            } else {
                double dx = qx - cx, dy = qy - cy;
                inside = dx * dx + dy * dy <= r * r;
            }
            hit += inside ? 1 : 0;
        }
    }
    return static_cast<float>(hit) / 16.0f;
}

inline void render_mover(Image& frame, const Mover& m, int t) {
    auto [px, py] = m.position(t, frame.width(), frame.height());
    int x0 = std::max(0, static_cast<int>(std::floor(px)) - 1);
    int y0 = std::max(0, static_cast<int>(std::floor(py)) - 1);
    int x1 = std::min(frame.width() - 1, static_cast<int>(std::ceil(px)) + m.size);
    int y1 = std::min(frame.height() - 1, static_cast<int>(std::ceil(py)) + m.size);
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            float cov = sprite_coverage(m, px, py, x, y);
            if (cov <= 0.0f) continue;
            float v = frame.at(x, y) + cov * (m.intensity - frame.at(x, y));
            frame.at(x, y) = std::max(frame.at(x, y), v);
        }
    }
}

inline void mover_mask(Image& mask, const Mover& m, int t) {
    auto [px, py] = m.position(t, mask.width(), mask.height());
    int x0 = std::max(0, static_cast<int>(std::floor(px)));
    int y0 = std::max(0, static_cast<int>(std::floor(py)));
    int x1 = std::min(mask.width() - 1, static_cast<int>(std::ceil(px)) + m.size);
    int y1 = std::min(mask.height() - 1, static_cast<int>(std::ceil(py)) + m.size);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
            if (sprite_coverage(m, px, py, x, y) > 0.5f) mask.at(x, y) = 255.0f;
}

inline std::vector<Mover> make_walkers(const SyntheticSceneSpec& spec, Rng& rng) {
    std::vector<Mover> walkers;
    for (int i = 0; i < spec.walker_count; ++i) {
        Mover m;
        m.size = spec.walker_size;
        m.intensity = spec.walker_intensity;
        m.shape = spec.walker_shape;
        double speed = rng.uniform(spec.walker_speed_min, spec.walker_speed_max);
        m.vx = rng.bernoulli(0.5) ? speed : -speed;
        m.vy = 0.0;
        m.x0 = rng.uniform(0.0, std::max(1.0, static_cast<double>(spec.width - m.size)));
        if (!spec.lanes.empty()) {
            m.y0 = static_cast<double>(spec.lanes[i % spec.lanes.size()]);
        } else {
            m.y0 = rng.uniform(0.0, std::max(1.0, static_cast<double>(spec.height - m.size)));
        }
        walkers.push_back(m);
    }
    return walkers;
}

inline Mover make_anomaly_mover(const SyntheticSceneSpec& spec, const AnomalySpec& a, Rng& rng) {
    Mover m;
    m.size = a.size;
    m.intensity = a.intensity;
    m.shape = spec.walker_shape;
    if (a.kind == AnomalyKind::NovelTrajectory) {
        // vertical mover crossing the lanes
        m.vx = 0.0;
        m.vy = rng.bernoulli(0.5) ? a.speed : -a.speed;
        m.x0 = rng.uniform(0.0, std::max(1.0, static_cast<double>(spec.width - m.size)));
        m.y0 = rng.uniform(0.0, std::max(1.0, static_cast<double>(spec.height - m.size)));
    } else {
        double speed = a.speed;
        m.vx = rng.bernoulli(0.5) ? speed : -speed;
        m.vy = 0.0;
        m.x0 = rng.uniform(0.0, std::max(1.0, static_cast<double>(spec.width - m.size)));
        if (!spec.lanes.empty()) {
            m.y0 = static_cast<double>(spec.lanes[rng.below(spec.lanes.size())]);
            m.y0 = std::min(m.y0, static_cast<double>(spec.height - m.size));
        } else {
            m.y0 = rng.uniform(0.0, std::max(1.0, static_cast<double>(spec.height - m.size)));
        }
    }
    return m;
}

inline Image background_plate(const SyntheticSceneSpec& spec, Rng& rng) {
    Image bg(spec.width, spec.height, spec.background);
    if (spec.texture_amplitude > 0.0f) {
        for (int y = 0; y < spec.height; ++y)
            for (int x = 0; x < spec.width; ++x)
                bg.at(x, y) += static_cast<float>(rng.uniform(-1.0, 1.0)) * spec.texture_amplitude;
    }
    return bg;
}

} // namespace detail

inline void validate_spec(const SyntheticSceneSpec& spec) {
    if (spec.width < 20 || spec.height < 20)
        raise(ErrorKind::InvalidSpec, "canvas must be at least 20x20");
    if (spec.train_frames < 7 || spec.test_frames < 7)
        raise(ErrorKind::InvalidSpec, "partitions need at least 7 frames");
    if (spec.walker_size > spec.width || spec.walker_size > spec.height)
        raise(ErrorKind::InvalidSpec, "walker sprite larger than canvas");
    for (const auto& a : spec.anomalies) {
        if (a.size > spec.width || a.size > spec.height)
            raise(ErrorKind::InvalidSpec, "anomaly sprite larger than canvas");
        if (a.frame_begin < 0 || a.frame_end < a.frame_begin || a.frame_end >= spec.test_frames)
            raise(ErrorKind::InvalidSpec, "anomaly span outside the test sequence");
    }
    for (int lane : spec.lanes)
        if (lane < 0 || lane + spec.walker_size > spec.height)
            raise(ErrorKind::InvalidSpec, "lane outside the canvas");
}

// Generates (train, test): train holds only normal walker motion, test holds
// walkers plus the injected anomalies with pixel masks and track boxes.
inline std::pair<DatasetPartition, DatasetPartition> generate_synthetic(const SyntheticSceneSpec& spec) {
    validate_spec(spec);
    Rng root(spec.seed);
    Rng texture_rng = root.fork(0);
    Rng train_rng = root.fork(1);
    Rng test_rng = root.fork(2);
    Rng anomaly_rng = root.fork(3);

    Image bg = detail::background_plate(spec, texture_rng);

    auto render_partition = [&](int frame_count, const std::vector<detail::Mover>& walkers,
                                FrameSequence& seq) {
        seq.width = spec.width;
        seq.height = spec.height;
        seq.frames.reserve(static_cast<std::size_t>(frame_count));
        for (int t = 0; t < frame_count; ++t) {
            Image frame = bg;
            for (const auto& w : walkers) detail::render_mover(frame, w, t);
            seq.frames.push_back(std::move(frame));
        }
    };

    DatasetPartition train;
    train.role = PartitionRole::Train;
    {
        FrameSequence seq;
        seq.sequence_id = "seq000";
        auto walkers = detail::make_walkers(spec, train_rng);
        render_partition(spec.train_frames, walkers, seq);
        train.sequences.push_back(std::move(seq));
        train.pixel_masks.emplace_back();
        train.track_boxes.emplace_back();
    }

    DatasetPartition test;
    test.role = PartitionRole::Test;
    {
        FrameSequence seq;
        seq.sequence_id = "seq000";
        auto walkers = detail::make_walkers(spec, test_rng);
        std::vector<detail::Mover> movers;
        movers.reserve(spec.anomalies.size());
        for (const auto& a : spec.anomalies)
            movers.push_back(detail::make_anomaly_mover(spec, a, anomaly_rng));

        seq.width = spec.width;
        seq.height = spec.height;
        std::vector<Image> masks;
        std::vector<TrackBox> tracks;
        for (int t = 0; t < spec.test_frames; ++t) {
            Image frame = bg;
            for (const auto& w : walkers) detail::render_mover(frame, w, t);
            Image mask(spec.width, spec.height, 0.0f);
            for (std::size_t ai = 0; ai < spec.anomalies.size(); ++ai) {
                const auto& a = spec.anomalies[ai];
                if (t < a.frame_begin || t > a.frame_end) continue;
                // anomaly-local time keeps the trajectory independent of the span start
                int local_t = t - a.frame_begin;
                detail::render_mover(frame, movers[ai], local_t);
                Image one(spec.width, spec.height, 0.0f);
                detail::mover_mask(one, movers[ai], local_t);
                int min_x = spec.width, min_y = spec.height, max_x = -1, max_y = -1;
                for (int y = 0; y < spec.height; ++y)
                    for (int x = 0; x < spec.width; ++x)
                        if (one.at(x, y) > 0) {
                            mask.at(x, y) = 255.0f;
                            min_x = std::min(min_x, x);
                            min_y = std::min(min_y, y);
                            max_x = std::max(max_x, x);
                            max_y = std::max(max_y, y);
                        }
                if (max_x >= min_x) {
                    TrackBox tb;
                    tb.track_id = static_cast<int>(ai) + 1;
                    tb.frame = t;
                    tb.box = {min_x, min_y, max_x - min_x + 1, max_y - min_y + 1};
                    tracks.push_back(tb);
                }
            }
            seq.frames.push_back(std::move(frame));
            masks.push_back(std::move(mask));
        }
        // group rows by track id, frames increasing, to match the CSV contract
        std::stable_sort(tracks.begin(), tracks.end(), [](const TrackBox& a, const TrackBox& b) {
            return a.track_id != b.track_id ? a.track_id < b.track_id : a.frame < b.frame;
        });
        test.sequences.push_back(std::move(seq));
        test.pixel_masks.push_back(std::move(masks));
        test.track_boxes.push_back(std::move(tracks));
    }
    return {std::move(train), std::move(test)};
}

} // namespace vad
