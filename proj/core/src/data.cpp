#include "apprentice/data.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "apprentice/rng.hpp"

namespace apprentice {

namespace {

std::vector<std::uint8_t> read_all(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(cat("cannot open ", path));
    in.seekg(0, std::ios::end);
    const auto size = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(size));
    in.read(reinterpret_cast<char*>(buf.data()), size);
    if (!in) throw IoError(cat("short read on ", path));
    return buf;
}

std::uint32_t be32(const std::vector<std::uint8_t>& buf, std::size_t off, const std::string& path) {
    if (off + 4 > buf.size())
        throw IoError(cat(path, ": truncated at offset ", off, " (need 4 header bytes)"));
    return (std::uint32_t(buf[off]) << 24) | (std::uint32_t(buf[off + 1]) << 16) |
           (std::uint32_t(buf[off + 2]) << 8) | std::uint32_t(buf[off + 3]);
}

} // namespace

Dataset read_mnist(const std::string& images_path, const std::string& labels_path) {
    const auto img = read_all(images_path);
    const auto lab = read_all(labels_path);

    const std::uint32_t img_magic = be32(img, 0, images_path);
    if (img_magic != 0x00000803u)
        throw IoError(cat(images_path, ": bad idx image magic 0x", std::hex, img_magic,
                          " at offset 0 (expected 0x803)"));
    const std::uint32_t lab_magic = be32(lab, 0, labels_path);
    if (lab_magic != 0x00000801u)
        throw IoError(cat(labels_path, ": bad idx label magic 0x", std::hex, lab_magic,
                          " at offset 0 (expected 0x801)"));

    const std::uint32_t n_img = be32(img, 4, images_path);
    const std::uint32_t rows = be32(img, 8, images_path);
    const std::uint32_t cols = be32(img, 12, images_path);
    const std::uint32_t n_lab = be32(lab, 4, labels_path);
    if (n_img != n_lab)
        throw IoError(cat("image/label count mismatch: ", images_path, " holds ", n_img,
                          " images but ", labels_path, " holds ", n_lab, " labels"));

    const std::size_t pixels = std::size_t(rows) * cols;
    if (16 + std::size_t(n_img) * pixels != img.size())
        throw IoError(cat(images_path, ": payload truncated at offset ", img.size(), " (header ",
                          "promises ", 16 + std::size_t(n_img) * pixels, " bytes)"));
    if (8 + std::size_t(n_lab) != lab.size())
        throw IoError(cat(labels_path, ": payload truncated at offset ", lab.size(),
                          " (header promises ", 8 + std::size_t(n_lab), " bytes)"));

    Dataset d;
    d.name = "mnist";
    d.num_classes = 10;
    d.image_shape = {1, rows, cols};
    d.samples.reserve(n_img);
    for (std::uint32_t i = 0; i < n_img; ++i) {
        Sample s;
        s.id = i;
        s.label = lab[8 + i];
        if (s.label >= d.num_classes)
            throw IoError(cat(labels_path, ": label ", s.label, " out of range for sample ", i));
        s.image = Tensor<float>({1, rows, cols});
        const std::uint8_t* px = img.data() + 16 + std::size_t(i) * pixels;
        for (std::size_t j = 0; j < pixels; ++j)
            s.image.data[j] = static_cast<float>(px[j]) / 255.0f;
        d.samples.push_back(std::move(s));
    }
    return d;
}

Dataset read_cifar10(const std::vector<std::string>& batch_files) {
    constexpr std::size_t kRecord = 3073; // label byte + 3*1024 pixels
    Dataset d;
    d.name = "cifar10";
    d.num_classes = 10;
    d.image_shape = {3, 32, 32};
    std::int64_t next_id = 0;
    for (const auto& path : batch_files) {
        const auto buf = read_all(path);
        if (buf.size() % kRecord != 0)
            throw IoError(cat(path, ": size ", buf.size(), " is not a multiple of the ", kRecord,
                              "-byte record"));
        const std::size_t count = buf.size() / kRecord;
        for (std::size_t r = 0; r < count; ++r) {
            const std::uint8_t* rec = buf.data() + r * kRecord;
            Sample s;
            s.id = next_id++;
            s.label = rec[0];
            if (s.label >= d.num_classes)
                throw IoError(cat(path, ": label byte ", int(rec[0]), " out of range in record ",
                                  r));
            s.image = Tensor<float>({3, 32, 32});
            for (std::size_t j = 0; j < 3072; ++j)
                s.image.data[j] = static_cast<float>(rec[1 + j]) / 255.0f;
            d.samples.push_back(std::move(s));
        }
    }
    return d;
}

NormStats compute_norm_stats(const Dataset& train) {
    if (train.samples.empty()) throw IoError("cannot compute normalization stats of empty dataset");
    const std::size_t c = train.image_shape[0];
    const std::size_t hw = train.image_shape[1] * train.image_shape[2];
    NormStats st;
    st.mean.assign(c, 0.0f);
    st.stddev.assign(c, 0.0f);
    std::vector<double> sum(c, 0.0), sq(c, 0.0);
    for (const auto& s : train.samples)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const float* p = s.image.data.data() + ch * hw;
            for (std::size_t j = 0; j < hw; ++j) {
                sum[ch] += p[j];
                sq[ch] += double(p[j]) * p[j];
            }
        }
    const double count = static_cast<double>(train.samples.size() * hw);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double m = sum[ch] / count;
        const double var = sq[ch] / count - m * m;
        st.mean[ch] = static_cast<float>(m);
        st.stddev[ch] = static_cast<float>(std::sqrt(var > 1e-12 ? var : 1e-12));
    }
    return st;
}

Dataset subset_per_class(const Dataset& d, int k) {
    if (k <= 0) return d;
    Dataset out;
    out.name = d.name;
    out.num_classes = d.num_classes;
    out.image_shape = d.image_shape;
    std::vector<int> taken(d.num_classes, 0);
    for (const auto& s : d.samples)
        if (taken[s.label] < k) {
            ++taken[s.label];
            out.samples.push_back(s);
        }
    return out;
}

Dataset load_split(const DataConfig& cfg, bool train) {
    Dataset d;
    if (cfg.dataset == "mnist") {
        const std::string img = train ? "/train-images-idx3-ubyte" : "/t10k-images-idx3-ubyte";
        const std::string lab = train ? "/train-labels-idx1-ubyte" : "/t10k-labels-idx1-ubyte";
        d = read_mnist(cfg.dir + img, cfg.dir + lab);
    } else if (cfg.dataset == "cifar10") {
        std::vector<std::string> files;
        if (train)
            for (int i = 1; i <= 5; ++i) files.push_back(cat(cfg.dir, "/data_batch_", i, ".bin"));
        else
            files.push_back(cfg.dir + "/test_batch.bin");
        d = read_cifar10(files);
    } else {
        throw ConfigError(cat("unknown dataset '", cfg.dataset, "' (expected mnist or cifar10)"));
    }
    if (train && cfg.subset_per_class > 0) d = subset_per_class(d, cfg.subset_per_class);
    return d;
}

BatchIterator::BatchIterator(const Dataset& data, const NormStats& stats, int num_classes,
                             std::size_t batch_size, std::uint64_t seed, bool shuffle,
                             bool augment)
    : data_(data), stats_(stats), num_classes_(num_classes), batch_size_(batch_size),
      shuffle_(shuffle), augment_(augment) {
    if (batch_size_ < 1) throw ConfigError("batch_size must be >= 1");
    if (data_.samples.empty()) throw IoError("cannot iterate an empty dataset");
    if (augment_ && (data_.image_shape[1] != 32 || data_.image_shape[2] != 32))
        throw ConfigError(cat("augmentation supports 32x32 images only, got ",
                              shape_str(data_.image_shape)));
    restart(seed);
}

void BatchIterator::restart(std::uint64_t seed) {
    seed_ = seed;
    cursor_ = 0;
    order_.resize(data_.samples.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    if (shuffle_) {
        // Fisher-Yates with explicit index draws, so the permutation only
        // depends on the seed and the standard-pinned mt19937_64 stream.
        Rng rng(Rng::derive(seed_, 0x7368756666ull));
        for (std::size_t i = order_.size(); i > 1; --i)
            std::swap(order_[i - 1], order_[rng.uniform_index(i)]);
    }
}

std::size_t BatchIterator::batches_per_epoch() const {
    return (data_.samples.size() + batch_size_ - 1) / batch_size_;
}

std::optional<Batch> BatchIterator::next() {
    if (cursor_ >= order_.size()) return std::nullopt;
    const std::size_t count = std::min(batch_size_, order_.size() - cursor_);
    const std::size_t c = data_.image_shape[0], h = data_.image_shape[1],
                      w = data_.image_shape[2];
    Batch b;
    b.input = make_tensor<float>({count, c, h, w});
    b.onehot = make_tensor<float>({count, static_cast<std::size_t>(num_classes_)});
    for (std::size_t i = 0; i < count; ++i) {
        const Sample& s = data_.samples[order_[cursor_ + i]];
        b.ids.push_back(s.id);
        b.labels.push_back(s.label);
        b.onehot->data[i * num_classes_ + s.label] = 1.0f;

        float* dst = b.input->data.data() + i * c * h * w;
        const float* src = s.image.data.data();
        std::vector<float> scratch;
        if (augment_) {
            // pad-4 zero border, random 32x32 crop, random horizontal flip;
            // draws keyed on (seed, sample id) so the stream is stable.
            Rng rng(Rng::derive(seed_, 0x617567ull, static_cast<std::uint64_t>(s.id)));
            const std::size_t oy = rng.uniform_index(9), ox = rng.uniform_index(9);
            const bool flip = rng.coin();
            scratch.assign(c * h * w, 0.0f);
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t x = 0; x < w; ++x) {
                        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + oy) - 4;
                        std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + ox) - 4;
                        if (flip) sx = static_cast<std::ptrdiff_t>(w) - 1 - sx;
                        float v = 0.0f;
                        if (sy >= 0 && sy < static_cast<std::ptrdiff_t>(h) && sx >= 0 &&
                            sx < static_cast<std::ptrdiff_t>(w))
                            v = src[(ch * h + sy) * w + sx];
                        scratch[(ch * h + y) * w + x] = v;
                    }
            src = scratch.data();
        }
        for (std::size_t ch = 0; ch < c; ++ch) {
            const float m = stats_.mean[ch], sd = stats_.stddev[ch];
            for (std::size_t j = 0; j < h * w; ++j)
                dst[ch * h * w + j] = (src[ch * h * w + j] - m) / sd;
        }
    }
    cursor_ += count;
    return b;
}

} // namespace apprentice
