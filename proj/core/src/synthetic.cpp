#include "apprentice/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "apprentice/rng.hpp"

namespace apprentice {

namespace {

struct Seg {
    double x0, y0, x1, y1;
};

// Seven-segment layout on the unit square: A top, B upper-right,
// C lower-right, D bottom, E lower-left, F upper-left, G middle.
const Seg kSegments[7] = {
    {0.0, 0.0, 1.0, 0.0}, // A
    {1.0, 0.0, 1.0, 0.5}, // B
    {1.0, 0.5, 1.0, 1.0}, // C
    {0.0, 1.0, 1.0, 1.0}, // D
    {0.0, 0.5, 0.0, 1.0}, // E
    {0.0, 0.0, 0.0, 0.5}, // F
    {0.0, 0.5, 1.0, 0.5}, // G
};

const int kDigitSegs[10] = {
    0b0111111, // 0: ABCDEF
    0b0000110, // 1: BC
    0b1011011, // 2: ABDEG
    0b1001111, // 3: ABCDG
    0b1100110, // 4: BCFG
    0b1101101, // 5: ACDFG
    0b1111101, // 6: ACDEFG
    0b0000111, // 7: ABC
    0b1111111, // 8
    0b1101111, // 9: ABCDFG
};

double point_segment_dist(double px, double py, const Seg& s) {
    const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double cx = s.x0 + t * dx, cy = s.y0 + t * dy;
    return std::hypot(px - cx, py - cy);
}

void be32_out(std::ofstream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_split(const std::string& img_path, const std::string& lab_path, int count,
                 Rng& label_rng, std::uint64_t draw_stream, double noise_sigma, int max_shift) {
    std::ofstream img(img_path, std::ios::binary);
    std::ofstream lab(lab_path, std::ios::binary);
    if (!img || !lab) throw IoError(cat("cannot write synthetic dataset to ", img_path));
    be32_out(img, 0x00000803u);
    be32_out(img, static_cast<std::uint32_t>(count));
    be32_out(img, 28);
    be32_out(img, 28);
    be32_out(lab, 0x00000801u);
    be32_out(lab, static_cast<std::uint32_t>(count));
    std::vector<unsigned char> pixels(28 * 28);
    for (int i = 0; i < count; ++i) {
        const int digit = static_cast<int>(label_rng.uniform_index(10));
        const Tensor<float> t = render_synthetic_digit(
            digit, Rng::derive(draw_stream, static_cast<std::uint64_t>(i)), noise_sigma,
            max_shift);
        for (std::size_t j = 0; j < t.numel(); ++j)
            pixels[j] = static_cast<unsigned char>(std::lround(std::clamp(t.data[j], 0.0f, 1.0f) * 255.0f));
        img.write(reinterpret_cast<const char*>(pixels.data()), pixels.size());
        lab.put(static_cast<char>(digit));
    }
    if (!img || !lab) throw IoError(cat("short write on ", img_path));
}

} // namespace

Tensor<float> render_synthetic_digit(int digit, std::uint64_t draw_seed, double noise_sigma,
                                     int max_shift) {
    if (digit < 0 || digit > 9) throw ShapeError(cat("digit out of range: ", digit));
    Rng rng(draw_seed);
    Tensor<float> t({1, 28, 28});

    const double box_w = rng.uniform(9.0, 13.0);
    const double box_h = rng.uniform(14.0, 18.0);
    const double cx = 14.0 + rng.uniform(-double(max_shift), double(max_shift));
    const double cy = 14.0 + rng.uniform(-double(max_shift), double(max_shift));
    const double slant = rng.uniform(-0.15, 0.15);
    const double stroke = rng.uniform(1.0, 1.5);
    const double level = rng.uniform(0.75, 1.0);

    Seg segs[7];
    int active = kDigitSegs[digit];
    for (int s = 0; s < 7; ++s) {
        segs[s] = kSegments[s];
        // endpoint jitter in glyph space
        segs[s].x0 += rng.uniform(-0.04, 0.04);
        segs[s].y0 += rng.uniform(-0.04, 0.04);
        segs[s].x1 += rng.uniform(-0.04, 0.04);
        segs[s].y1 += rng.uniform(-0.04, 0.04);
    }

    for (int y = 0; y < 28; ++y)
        for (int x = 0; x < 28; ++x) {
            // map pixel into glyph space with slant
            const double gy = (y - cy) / box_h + 0.5;
            const double gx = (x - cx - slant * (y - cy)) / box_w + 0.5;
            double best = 1e9;
            for (int s = 0; s < 7; ++s)
                if (active & (1 << s))
                    best = std::min(best, point_segment_dist(gx * box_w, gy * box_h,
                                                              Seg{segs[s].x0 * box_w,
                                                                  segs[s].y0 * box_h,
                                                                  segs[s].x1 * box_w,
                                                                  segs[s].y1 * box_h}));
            double v = 0.0;
            if (best < stroke * 0.5)
                v = level;
            else if (best < stroke * 0.5 + 1.0)
                v = level * (stroke * 0.5 + 1.0 - best);
            v += noise_sigma * rng.normal();
            t.data[y * 28 + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    return t;
}

void write_synthetic_mnist(const std::string& dir, const SyntheticConfig& cfg) {
    Rng train_labels(Rng::derive(cfg.seed, 0x747261696eull));
    Rng test_labels(Rng::derive(cfg.seed, 0x74657374ull));
    write_split(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte",
                cfg.train_count, train_labels, Rng::derive(cfg.seed, 1), cfg.noise_sigma,
                cfg.max_shift);
    write_split(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte", cfg.test_count,
                test_labels, Rng::derive(cfg.seed, 2), cfg.noise_sigma, cfg.max_shift);
}

} // namespace apprentice
