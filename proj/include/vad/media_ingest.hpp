#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vad/errors.hpp"
#include "vad/image.hpp"
#include "vad/png_io.hpp"

namespace vad {

struct FrameSequence {
    std::vector<Image> frames; // grayscale, intensities in [0, 255]
    int width = 0;
    int height = 0;
    std::string sequence_id;
    std::optional<double> fps_hint;

    std::size_t frame_count() const { return frames.size(); }
};

struct Box {
    int x = 0, y = 0, w = 0, h = 0; // top-left + size, pixel units

    long long area() const { return static_cast<long long>(w) * h; }
    int x2() const { return x + w; } // exclusive
    int y2() const { return y + h; }
};

struct TrackBox {
    int track_id = 0;
    int frame = 0; // 0-based
    Box box;
};

enum class PartitionRole { Train, Test };

struct DatasetPartition {
    PartitionRole role = PartitionRole::Train;
    std::vector<FrameSequence> sequences;
    // pixel_masks[s][t] pairs with sequences[s].frames[t]; empty when absent
    std::vector<std::vector<Image>> pixel_masks;
    // track_boxes[s] holds that sequence's records, grouped by track, frames increasing
    std::vector<std::vector<TrackBox>> track_boxes;

    bool has_masks(std::size_t seq) const {
        return seq < pixel_masks.size() && !pixel_masks[seq].empty();
    }
};

// Source-dataset preprocessing: scale then rotate (Table-style halfscale / 45deg).
struct IngestTransform {
    double scale_factor = 1.0;
    double rotation_degrees = 0.0;

    bool is_identity() const { return scale_factor == 1.0 && rotation_degrees == 0.0; }
};

inline std::string frame_file_name(const char* prefix, int index) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%06d.png", prefix, index);
    return buf;
}

namespace detail {

inline std::vector<std::string> split(const std::string& s, char delim) {
    std::vector<std::string> parts;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, delim)) parts.push_back(cur);
    return parts;
}

inline int parse_int(const std::string& s, const std::string& what) {
    int v = 0;
    auto begin = s.data();
    auto end = s.data() + s.size();
    while (begin != end && (*begin == ' ' || *begin == '\t')) ++begin;
    auto [p, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{}) raise(ErrorKind::Format, what + ": expected integer, got '" + s + "'");
    return v;
}

} // namespace detail

// tracks.csv: header `track_id,frame,x,y,w,h`, frame 0-based.
inline std::vector<TrackBox> parse_tracks_csv(std::istream& in, const std::string& what) {
    std::string line;
    if (!std::getline(in, line)) raise(ErrorKind::Format, what + ": empty tracks file");
    // tolerate trailing \r from CRLF files
    auto strip = [](std::string& s) {
        if (!s.empty() && s.back() == '\r') s.pop_back();
    };
    strip(line);
    if (line != "track_id,frame,x,y,w,h")
        raise(ErrorKind::Format, what + ": bad tracks header '" + line + "'");
    std::vector<TrackBox> rows;
    while (std::getline(in, line)) {
        strip(line);
        if (line.empty()) continue;
        auto f = detail::split(line, ',');
        if (f.size() != 6) raise(ErrorKind::Format, what + ": bad tracks row '" + line + "'");
        TrackBox tb;
        tb.track_id = detail::parse_int(f[0], what);
        tb.frame = detail::parse_int(f[1], what);
        tb.box = {detail::parse_int(f[2], what), detail::parse_int(f[3], what),
                  detail::parse_int(f[4], what), detail::parse_int(f[5], what)};
        rows.push_back(tb);
    }
    // per-track frame indices must be strictly increasing
    std::map<int, int> last_frame;
    for (const auto& tb : rows) {
        auto it = last_frame.find(tb.track_id);
        if (it != last_frame.end() && tb.frame <= it->second)
            raise(ErrorKind::Format, what + ": track " + std::to_string(tb.track_id) +
                                         " frames not strictly increasing");
        last_frame[tb.track_id] = tb.frame;
    }
    return rows;
}

inline void write_tracks_csv(std::ostream& out, const std::vector<TrackBox>& rows) {
    out << "track_id,frame,x,y,w,h\n";
    for (const auto& tb : rows)
        out << tb.track_id << ',' << tb.frame << ',' << tb.box.x << ',' << tb.box.y << ','
            << tb.box.w << ',' << tb.box.h << '\n';
}

// Layout: <root>/{train,test}/<seq>/frame_%06d.png, masks mask_%06d.png,
// tracks at <root>/test/<seq>/tracks.csv. Frames must be densely numbered
// from zero. Sequences are ordered lexicographically by directory name.
inline DatasetPartition load_partition(const std::filesystem::path& root, PartitionRole role) {
    namespace fs = std::filesystem;
    fs::path dir = root / (role == PartitionRole::Train ? "train" : "test");
    if (!fs::is_directory(dir)) raise(ErrorKind::NotFound, "missing partition directory " + dir.string());

    std::vector<fs::path> seq_dirs;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) seq_dirs.push_back(e.path());
    std::sort(seq_dirs.begin(), seq_dirs.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });

    DatasetPartition part;
    part.role = role;
    for (const auto& sd : seq_dirs) {
        FrameSequence seq;
        seq.sequence_id = sd.filename().string();
        for (int t = 0;; ++t) {
            fs::path p = sd / frame_file_name("frame", t);
            if (!fs::exists(p)) break;
            Image img = png::load_gray(p);
            if (t == 0) {
                seq.width = img.width();
                seq.height = img.height();
            } else if (img.width() != seq.width || img.height() != seq.height) {
                raise(ErrorKind::Format, p.string() + ": frame dimensions differ within sequence");
            }
            seq.frames.push_back(std::move(img));
        }
        if (seq.frames.empty())
            raise(ErrorKind::Format, sd.string() + ": no frame_000000.png found");

        std::vector<Image> masks;
        std::vector<TrackBox> tracks;
        if (role == PartitionRole::Test) {
            if (fs::exists(sd / frame_file_name("mask", 0))) {
                for (std::size_t t = 0; t < seq.frames.size(); ++t) {
                    fs::path p = sd / frame_file_name("mask", static_cast<int>(t));
                    if (!fs::exists(p))
                        raise(ErrorKind::Format, sd.string() + ": masks present but " +
                                                     p.filename().string() + " is missing");
                    Image m = png::load_gray(p);
                    if (m.width() != seq.width || m.height() != seq.height)
                        raise(ErrorKind::Format, p.string() + ": mask/frame dimension mismatch");
                    masks.push_back(std::move(m));
                }
            }
            fs::path tp = sd / "tracks.csv";
            if (fs::exists(tp)) {
                std::ifstream in(tp);
                if (!in) raise(ErrorKind::Io, "cannot open " + tp.string());
                tracks = parse_tracks_csv(in, tp.string());
                for (const auto& tb : tracks)
                    if (tb.frame < 0 || static_cast<std::size_t>(tb.frame) >= seq.frames.size())
                        raise(ErrorKind::Format, tp.string() + ": track " + std::to_string(tb.track_id) +
                                                     " references missing frame " + std::to_string(tb.frame));
            }
        }
        part.sequences.push_back(std::move(seq));
        part.pixel_masks.push_back(std::move(masks));
        part.track_boxes.push_back(std::move(tracks));
    }
    if (part.sequences.empty())
        raise(ErrorKind::Format, dir.string() + ": no sequences found");
    return part;
}

inline void save_partition(const std::filesystem::path& root, const DatasetPartition& part) {
    namespace fs = std::filesystem;
    fs::path dir = root / (part.role == PartitionRole::Train ? "train" : "test");
    for (std::size_t s = 0; s < part.sequences.size(); ++s) {
        const auto& seq = part.sequences[s];
        fs::path sd = dir / seq.sequence_id;
        fs::create_directories(sd);
        for (std::size_t t = 0; t < seq.frames.size(); ++t)
            png::save_gray(sd / frame_file_name("frame", static_cast<int>(t)), seq.frames[t]);
        if (part.role == PartitionRole::Test) {
            if (s < part.pixel_masks.size())
                for (std::size_t t = 0; t < part.pixel_masks[s].size(); ++t)
                    png::save_gray(sd / frame_file_name("mask", static_cast<int>(t)), part.pixel_masks[s][t]);
            std::ostringstream csv;
            write_tracks_csv(csv, s < part.track_boxes.size() ? part.track_boxes[s]
                                                              : std::vector<TrackBox>{});
            write_file_text(sd / "tracks.csv", csv.str());
        }
    }
}

inline FrameSequence apply_transform(const FrameSequence& seq, const IngestTransform& t) {
    if (!(t.scale_factor > 0.0)) raise(ErrorKind::InvalidTransform, "scale_factor must be positive");
    if (t.is_identity()) return seq;

    int out_w = static_cast<int>(std::lround(seq.width * t.scale_factor));
    int out_h = static_cast<int>(std::lround(seq.height * t.scale_factor));
    if (out_w < 1 || out_h < 1)
        raise(ErrorKind::InvalidTransform, "transform produces a degenerate frame size");

    FrameSequence out;
    out.sequence_id = seq.sequence_id;
    out.fps_hint = seq.fps_hint;
    out.width = out_w;
    out.height = out_h;
    out.frames.reserve(seq.frames.size());
    for (const auto& f : seq.frames) {
        Image img = (out_w == seq.width && out_h == seq.height) ? f : resize_bilinear(f, out_w, out_h);
        if (t.rotation_degrees != 0.0) img = rotate_about_center(img, t.rotation_degrees);
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x)
                img.at(x, y) = std::clamp(img.at(x, y), 0.0f, 255.0f);
        out.frames.push_back(std::move(img));
    }
    return out;
}

} // namespace vad
