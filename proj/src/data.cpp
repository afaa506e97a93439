#include "kpvp/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace kpvp {

namespace fs = std::filesystem;

namespace {

std::string read_meta_field(const fs::path& meta_path, const std::string& key) {
    std::ifstream in(meta_path);
    if (!in) throw DataError("load_dataset: missing meta file " + meta_path.string());
    std::string line;
    while (std::getline(in, line)) {
        const auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        std::string k = line.substr(0, colon);
        if (k == key) {
            std::string v = line.substr(colon + 1);
            const auto first = v.find_first_not_of(" \t");
            return first == std::string::npos ? "" : v.substr(first);
        }
    }
    throw DataError("load_dataset: meta field '" + key + "' missing in " + meta_path.string());
}

std::string frame_name(int index1) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%06d.png", index1);
    return buf;
}

}  // namespace

Dataset load_dataset(const DatasetSpec& spec) {
    if (!fs::exists(spec.root)) throw DataError("load_dataset: root does not exist: " + spec.root.string());
    Dataset ds;
    {
        std::ifstream in(spec.root / "actions.txt");
        if (!in) throw DataError("load_dataset: missing actions.txt under " + spec.root.string());
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) ds.actions.push_back(line);
    }
    const fs::path videos = spec.root / "videos";
    if (!fs::exists(videos)) return ds;

    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(videos))
        if (e.is_directory()) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());

    for (const auto& dir : dirs) {
        VideoClip clip;
        clip.id = dir.filename().string();
        const std::string action_name = read_meta_field(dir / "meta", "action");
        const auto it = std::find(ds.actions.begin(), ds.actions.end(), action_name);
        if (it == ds.actions.end())
            throw DataError("load_dataset: unknown action '" + action_name + "' in clip " + clip.id);
        clip.action = static_cast<int>(it - ds.actions.begin());
        const int n = std::stoi(read_meta_field(dir / "meta", "num_frames"));
        if (n < 2) throw DataError("load_dataset: clip " + clip.id + " too short (needs >= 2 frames)");
        for (int i = 1; i <= n; ++i) {
            fs::path p = dir / frame_name(i);
            if (!fs::exists(p))
                throw DataError("load_dataset: non-contiguous frame numbering in clip " + clip.id +
                                " (missing " + p.filename().string() + ")");
            clip.frame_paths.push_back(std::move(p));
        }
        if (fs::exists(dir / "centers")) {
            std::ifstream in(dir / "centers");
            std::string line;
            while (std::getline(in, line)) {
                std::istringstream ss(line);
                std::vector<Eigen::Vector2f> pts;
                float x, y;
                while (ss >> x >> y) pts.emplace_back(x, y);
                clip.centers.push_back(std::move(pts));
            }
            if (static_cast<int>(clip.centers.size()) != n)
                throw DataError("load_dataset: centers length mismatch in clip " + clip.id);
        }
        ds.clips.push_back(std::move(clip));
    }
    return ds;
}

std::pair<int, int> sample_pair_indices(int frame_count, int max_gap, Rng& rng) {
    if (frame_count < 2) throw InvalidInputError("sample_pair_indices: need at least 2 frames");
    const int gap = max_gap > 0 ? max_gap : frame_count;
    std::uniform_int_distribution<int> di(0, frame_count - 1);
    const int i = di(rng);
    const int lo = std::max(0, i - gap), hi = std::min(frame_count - 1, i + gap);
    std::uniform_int_distribution<int> dj(lo, hi - 1);  // skip i by shifting
    int j = dj(rng);
    if (j >= i) ++j;
    return {i, j};
}

Frame warp_affine(const Frame& src, const Eigen::Matrix<float, 2, 3>& m, int out_h, int out_w) {
    Frame out(1, 3, out_h, out_w);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
            const float sx = m(0, 0) * x + m(0, 1) * y + m(0, 2);
            const float sy = m(1, 0) * x + m(1, 1) * y + m(1, 2);
            const float cx = std::min(std::max(sx, 0.0f), float(src.w - 1));
            const float cy = std::min(std::max(sy, 0.0f), float(src.h - 1));
            const int x0 = static_cast<int>(cx), y0 = static_cast<int>(cy);
            const int x1 = std::min(x0 + 1, src.w - 1), y1 = std::min(y0 + 1, src.h - 1);
            const float fx = cx - x0, fy = cy - y0;
            for (int c = 0; c < 3; ++c) {
                const float v00 = src.data(c, static_cast<Eigen::Index>(y0) * src.w + x0);
                const float v01 = src.data(c, static_cast<Eigen::Index>(y0) * src.w + x1);
                const float v10 = src.data(c, static_cast<Eigen::Index>(y1) * src.w + x0);
                const float v11 = src.data(c, static_cast<Eigen::Index>(y1) * src.w + x1);
                out.data(c, static_cast<Eigen::Index>(y) * out_w + x) =
                    (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
            }
        }
    return out;
}

std::pair<Frame, Frame> augment_pair(const Frame& a, const Frame& b, const AugmentSpec& spec,
                                     int out_h, int out_w, Rng& rng) {
    spec.validate();
    if (!a.same_shape(b)) throw InvalidInputError("augment_pair: frame shapes differ");
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    const bool flip = spec.flip && u01(rng) < 0.5;
    const double angle = spec.max_rotation_deg > 0
                             ? (u01(rng) * 2.0 - 1.0) * spec.max_rotation_deg * std::numbers::pi / 180.0
                             : 0.0;
    const double crop = spec.crop_min + u01(rng) * (spec.crop_max - spec.crop_min);
    const double off_x = u01(rng), off_y = u01(rng);
    float gains[3];
    for (int c = 0; c < 3; ++c)
        gains[c] = static_cast<float>(spec.color_gain_min + u01(rng) * (spec.color_gain_max - spec.color_gain_min));

    // Crop window in source pixels.
    const double cw = crop * a.w, ch = crop * a.h;
    const double cx0 = off_x * (a.w - cw), cy0 = off_y * (a.h - ch);
    const double ccx = cx0 + cw / 2.0, ccy = cy0 + ch / 2.0;
    const double cosA = std::cos(angle), sinA = std::sin(angle);

    // Output pixel -> crop-window coords -> rotate about window center.
    Eigen::Matrix<float, 2, 3> m;
    const double sx = cw / out_w, sy = ch / out_h;
    // p = R * (scale(q) - center) + center, with optional horizontal flip of q.
    const double fsx = flip ? -sx : sx;
    // Pixel centers sit at integer + 0.5 in continuous coordinates; the -0.5
    // keeps the map exact (e.g. a pure flip lands on integer samples).
    const double fx0 = flip ? (cx0 + cw - sx / 2.0 - 0.5) : (cx0 + sx / 2.0 - 0.5);
    const double fy0 = cy0 + sy / 2.0 - 0.5;
    m(0, 0) = float(cosA * fsx);
    m(0, 1) = float(-sinA * sy);
    m(0, 2) = float(cosA * (fx0 - ccx) - sinA * (fy0 - ccy) + ccx);
    m(1, 0) = float(sinA * fsx);
    m(1, 1) = float(cosA * sy);
    m(1, 2) = float(sinA * (fx0 - ccx) + cosA * (fy0 - ccy) + ccy);

    const bool identity = !flip && angle == 0.0 && crop == 1.0 && spec.color_gain_min == 1.0 &&
                          spec.color_gain_max == 1.0 && out_h == a.h && out_w == a.w;
    if (identity) return {a, b};

    Frame wa = warp_affine(a, m, out_h, out_w);
    Frame wb = warp_affine(b, m, out_h, out_w);
    for (int c = 0; c < 3; ++c) {
        wa.data.row(c) = ((wa.data.row(c).array() + 1.0f) * gains[c] - 1.0f).cwiseMin(1.0f).cwiseMax(-1.0f);
        wb.data.row(c) = ((wb.data.row(c).array() + 1.0f) * gains[c] - 1.0f).cwiseMin(1.0f).cwiseMax(-1.0f);
    }
    return {std::move(wa), std::move(wb)};
}

std::uint64_t dataset_digest(const Dataset& ds) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& clip : ds.clips) {
        h = fnv1a(clip.id.data(), clip.id.size(), h);
        h = fnv1a(&clip.action, sizeof(clip.action), h);
        const int n = clip.frame_count();
        h = fnv1a(&n, sizeof(n), h);
        for (const auto& p : clip.frame_paths) {
            std::ifstream in(p, std::ios::binary);
            std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
            h = fnv1a(bytes.data(), bytes.size(), h);
        }
    }
    return h;
}

}  // namespace kpvp
