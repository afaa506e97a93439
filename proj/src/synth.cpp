#include <cmath>
#include <fstream>
#include <numbers>

#include "kpvp/data.hpp"

namespace kpvp {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

struct Rgb {
    float r, g, b;
};

// Paint an antialiased solid disc.
void draw_disc(Frame& img, float cx, float cy, float radius, Rgb color) {
    const int x0 = std::max(0, int(cx - radius - 2)), x1 = std::min(img.w - 1, int(cx + radius + 2));
    const int y0 = std::max(0, int(cy - radius - 2)), y1 = std::min(img.h - 1, int(cy + radius + 2));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const float d = std::hypot(x - cx, y - cy);
            const float a = std::min(1.0f, std::max(0.0f, radius + 0.5f - d));
            if (a <= 0) continue;
            const Eigen::Index j = static_cast<Eigen::Index>(y) * img.w + x;
            img.data(0, j) = (1 - a) * img.data(0, j) + a * color.r;
            img.data(1, j) = (1 - a) * img.data(1, j) + a * color.g;
            img.data(2, j) = (1 - a) * img.data(2, j) + a * color.b;
        }
}

// Paint an antialiased capsule (thick segment).
void draw_segment(Frame& img, float x0, float y0, float x1, float y1, float thickness, Rgb color) {
    const int bx0 = std::max(0, int(std::min(x0, x1) - thickness - 2));
    const int bx1 = std::min(img.w - 1, int(std::max(x0, x1) + thickness + 2));
    const int by0 = std::max(0, int(std::min(y0, y1) - thickness - 2));
    const int by1 = std::min(img.h - 1, int(std::max(y0, y1) + thickness + 2));
    const float dx = x1 - x0, dy = y1 - y0;
    const float len2 = std::max(dx * dx + dy * dy, 1e-6f);
    for (int y = by0; y <= by1; ++y)
        for (int x = bx0; x <= bx1; ++x) {
            const float t = std::min(1.0f, std::max(0.0f, ((x - x0) * dx + (y - y0) * dy) / len2));
            const float d = std::hypot(x - (x0 + t * dx), y - (y0 + t * dy));
            const float a = std::min(1.0f, std::max(0.0f, thickness + 0.5f - d));
            if (a <= 0) continue;
            const Eigen::Index j = static_cast<Eigen::Index>(y) * img.w + x;
            img.data(0, j) = (1 - a) * img.data(0, j) + a * color.r;
            img.data(1, j) = (1 - a) * img.data(1, j) + a * color.g;
            img.data(2, j) = (1 - a) * img.data(2, j) + a * color.b;
        }
}

// Static per-clip background: dim vertical gradient plus two dim blobs.
Frame make_background(int h, int w, Rng& rng) {
    Frame bg(1, 3, h, w);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    const float base = -0.9f + 0.15f * u(rng);
    const float slope = 0.2f * u(rng);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const float v = base + slope * float(y) / float(h);
            const Eigen::Index j = static_cast<Eigen::Index>(y) * w + x;
            bg.data(0, j) = v;
            bg.data(1, j) = v;
            bg.data(2, j) = v;
        }
    for (int i = 0; i < 2; ++i)
        draw_disc(bg, u(rng) * w, u(rng) * h, 3.0f + 3.0f * u(rng),
                  {base + 0.25f, base + 0.2f, base + 0.3f});
    return bg;
}

struct ClipRecord {
    std::vector<Frame> frames;
    std::vector<std::vector<Eigen::Vector2f>> centers;
};

ClipRecord render_moving_disc(int length, int h, int w, int action, int action_count, Rng& rng) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Frame bg = make_background(h, w, rng);
    const float radius = 0.09f * std::min(h, w);
    const float margin = radius + 3.0f;
    const float cx = margin + u(rng) * (w - 2 * margin);
    const float cy = margin + u(rng) * (h - 2 * margin);
    const float ax = (0.15f + 0.2f * u(rng)) * w;
    const float ay = (0.15f + 0.2f * u(rng)) * h;
    const float omega = (0.25f + 0.35f * u(rng));
    const float omega_y = (0.25f + 0.35f * u(rng));
    const float phase = u(rng) * 2.0f * float(kPi);
    const float phase_y = u(rng) * 2.0f * float(kPi);
    const Rgb color{0.9f, 0.8f, 0.2f};
    ClipRecord rec;
    for (int t = 0; t < length; ++t) {
        float x, y;
        if (action_count == 1) {  // single-class set: full 2-D Lissajous motion
            x = cx + ax * std::sin(omega * t + phase);
            y = cy + ay * std::sin(omega_y * t + phase_y);
        } else if (action == 0) {  // horizontal oscillation
            x = cx + ax * std::sin(omega * t + phase);
            y = cy;
        } else {  // circular orbit
            x = cx + ax * std::cos(omega * t + phase);
            y = cy + ay * std::sin(omega * t + phase);
        }
        x = std::min(std::max(x, margin), w - margin);
        y = std::min(std::max(y, margin), h - margin);
        Frame f = bg;
        draw_disc(f, x, y, radius, color);
        rec.frames.push_back(std::move(f));
        rec.centers.push_back({Eigen::Vector2f(x, y)});
    }
    return rec;
}

ClipRecord render_pendulum(int length, int h, int w, int action, Rng& rng) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Frame bg = make_background(h, w, rng);
    const float px = 0.5f * w, py = 0.35f * h;
    const float l1 = 0.22f * h, l2 = 0.18f * h;
    const float base = u(rng) * 2.0f * float(kPi);
    const float omega = 0.3f + 0.2f * u(rng);
    const float amp = 0.5f + 0.4f * u(rng);
    const float omega2 = 0.5f + 0.3f * u(rng);
    ClipRecord rec;
    for (int t = 0; t < length; ++t) {
        float theta1, theta2;
        if (action == 0) {  // swinging
            theta1 = float(kPi) / 2 + amp * std::sin(omega * t + base);
            theta2 = theta1 + 0.6f * std::sin(omega2 * t + base);
        } else {  // steady rotation
            theta1 = base + (0.25f + 0.15f * omega) * t;
            theta2 = theta1 + 0.4f * std::sin(omega2 * t);
        }
        const float jx = px + l1 * std::cos(theta1), jy = py + l1 * std::sin(theta1);
        const float ex = jx + l2 * std::cos(theta2), ey = jy + l2 * std::sin(theta2);
        Frame f = bg;
        draw_segment(f, px, py, jx, jy, 2.0f, {0.1f, 0.5f, 0.9f});
        draw_segment(f, jx, jy, ex, ey, 2.0f, {0.9f, 0.3f, 0.2f});
        draw_disc(f, jx, jy, 3.0f, {0.95f, 0.9f, 0.3f});
        draw_disc(f, ex, ey, 3.0f, {0.3f, 0.9f, 0.5f});
        rec.frames.push_back(std::move(f));
        rec.centers.push_back({Eigen::Vector2f(jx, jy), Eigen::Vector2f(ex, ey)});
    }
    return rec;
}

ClipRecord render_bouncing(int length, int h, int w, int action, Rng& rng) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Frame bg = make_background(h, w, rng);
    const float radius = 0.07f * std::min(h, w);
    const float speed = (action == 0 ? 2.0f : 4.0f) * w / 64.0f;
    struct Ball {
        float x, y, vx, vy;
        Rgb color;
    };
    std::vector<Ball> balls;
    const Rgb palette[2] = {{0.9f, 0.4f, 0.1f}, {0.2f, 0.6f, 0.95f}};
    for (int i = 0; i < 2; ++i) {
        const float ang = u(rng) * 2.0f * float(kPi);
        balls.push_back({radius + u(rng) * (w - 2 * radius), radius + u(rng) * (h - 2 * radius),
                         speed * std::cos(ang), speed * std::sin(ang), palette[i]});
    }
    ClipRecord rec;
    for (int t = 0; t < length; ++t) {
        Frame f = bg;
        std::vector<Eigen::Vector2f> pts;
        for (auto& ball : balls) {
            draw_disc(f, ball.x, ball.y, radius, ball.color);
            pts.emplace_back(ball.x, ball.y);
            ball.x += ball.vx;
            ball.y += ball.vy;
            if (ball.x < radius || ball.x > w - radius) ball.vx = -ball.vx;
            if (ball.y < radius || ball.y > h - radius) ball.vy = -ball.vy;
            ball.x = std::min(std::max(ball.x, radius), w - radius);
            ball.y = std::min(std::max(ball.y, radius), h - radius);
        }
        rec.frames.push_back(std::move(f));
        rec.centers.push_back(std::move(pts));
    }
    return rec;
}

}  // namespace

SyntheticKind parse_synthetic_kind(const std::string& name) {
    if (name == "moving_disc") return SyntheticKind::MovingDisc;
    if (name == "two_part_pendulum") return SyntheticKind::TwoPartPendulum;
    if (name == "bouncing_shapes") return SyntheticKind::BouncingShapes;
    throw ConfigError("unknown synthetic kind: " + name);
}

void generate_synthetic_dataset(SyntheticKind kind, int count, int length, int h, int w,
                                int action_count, std::uint64_t seed, const fs::path& root) {
    if (length < 2) throw ConfigError("generate_synthetic_dataset: length must be >= 2");
    if (action_count < 1) throw ConfigError("generate_synthetic_dataset: need at least one class");
    fs::create_directories(root / "videos");
    {
        std::ofstream out(root / "actions.txt");
        for (int c = 0; c < action_count; ++c) out << "class_" << c << "\n";
    }
    for (int i = 0; i < count; ++i) {
        Rng rng(fnv1a(&i, sizeof(i), seed ^ 0x9e3779b97f4a7c15ull));
        const int action = i % action_count;
        ClipRecord rec;
        switch (kind) {
            case SyntheticKind::MovingDisc:
                rec = render_moving_disc(length, h, w, action, action_count, rng);
                break;
            case SyntheticKind::TwoPartPendulum: rec = render_pendulum(length, h, w, action, rng); break;
            case SyntheticKind::BouncingShapes: rec = render_bouncing(length, h, w, action, rng); break;
        }
        char id[32];
        std::snprintf(id, sizeof(id), "vid_%05d", i);
        const fs::path dir = root / "videos" / id;
        fs::create_directories(dir);
        for (int t = 0; t < length; ++t) {
            char name[32];
            std::snprintf(name, sizeof(name), "frame_%06d.png", t + 1);
            save_png(dir / name, rec.frames[t]);
        }
        {
            std::ofstream meta(dir / "meta");
            meta << "action: class_" << action << "\n";
            meta << "num_frames: " << length << "\n";
        }
        {
            std::ofstream centers(dir / "centers");
            centers.precision(6);
            for (const auto& pts : rec.centers) {
                for (std::size_t p = 0; p < pts.size(); ++p) {
                    if (p) centers << " ";
                    centers << pts[p].x() << " " << pts[p].y();
                }
                centers << "\n";
            }
        }
    }
}

}  // namespace kpvp
