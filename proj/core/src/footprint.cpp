#include "apprentice/footprint.hpp"

#include <algorithm>
#include <iomanip>

namespace apprentice {

namespace {

// Tracks the running feature-map shape while a table is assembled with
// conventional floor conv arithmetic.
struct TableBuilder {
    LayerTable rows;
    std::size_t c, h, w;

    TableBuilder(std::size_t c_, std::size_t h_, std::size_t w_) : c(c_), h(h_), w(w_) {}

    void conv(const std::string& name, std::size_t out_c, std::size_t k, std::size_t stride,
              std::size_t pad, bool bias = false) {
        const std::size_t oh = (h + 2 * pad - k) / stride + 1;
        const std::size_t ow = (w + 2 * pad - k) / stride + 1;
        rows.push_back({name, c * h * w, out_c * oh * ow,
                        out_c * c * k * k + (bias ? out_c : 0)});
        c = out_c;
        h = oh;
        w = ow;
    }

    // rectangular kernel (1x7 etc.)
    void conv_rect(const std::string& name, std::size_t out_c, std::size_t kh, std::size_t kw,
                   std::size_t stride, std::size_t ph, std::size_t pw) {
        const std::size_t oh = (h + 2 * ph - kh) / stride + 1;
        const std::size_t ow = (w + 2 * pw - kw) / stride + 1;
        rows.push_back({name, c * h * w, out_c * oh * ow, out_c * c * kh * kw});
        c = out_c;
        h = oh;
        w = ow;
    }

    void pool(std::size_t k, std::size_t stride, std::size_t pad = 0) {
        h = (h + 2 * pad - k) / stride + 1;
        w = (w + 2 * pad - k) / stride + 1;
    }

    void global_pool() { h = w = 1; }

    void fc(const std::string& name, std::size_t out) {
        const std::size_t in = c * h * w;
        rows.push_back({name, in, out, in * out + out});
        c = out;
        h = w = 1;
    }
};

LayerTable alexnet_table() {
    TableBuilder b(3, 224, 224);
    b.conv("conv1", 64, 11, 4, 2, true);
    b.pool(3, 2);
    b.conv("conv2", 192, 5, 1, 2, true);
    b.pool(3, 2);
    b.conv("conv3", 384, 3, 1, 1, true);
    b.conv("conv4", 256, 3, 1, 1, true);
    b.conv("conv5", 256, 3, 1, 1, true);
    b.pool(3, 2);
    b.fc("fc6", 4096);
    b.fc("fc7", 4096);
    b.fc("fc8", 1000);
    return b.rows;
}

LayerTable resnet_bottleneck_table(const std::vector<int>& blocks_per_stage) {
    TableBuilder b(3, 224, 224);
    b.conv("conv1", 64, 7, 2, 3);
    b.pool(3, 2, 1);
    const std::size_t mids[4] = {64, 128, 256, 512};
    std::size_t in_c = 64;
    for (int s = 0; s < 4; ++s) {
        const std::size_t mid = mids[s], out = mid * 4;
        for (int blk = 0; blk < blocks_per_stage[s]; ++blk) {
            const std::string base = cat("stage", s + 1, ".block", blk);
            const std::size_t stride = (s > 0 && blk == 0) ? 2 : 1;
            const std::size_t ih = b.h, iw = b.w;
            b.conv(base + ".conv1", mid, 1, 1, 0);
            b.conv(base + ".conv2", mid, 3, stride, 1);
            b.conv(base + ".conv3", out, 1, 1, 0);
            if (blk == 0) {
                // projection shortcut from the block input
                b.rows.push_back({base + ".proj", in_c * ih * iw, out * b.h * b.w,
                                  out * in_c});
            }
            in_c = out;
        }
    }
    b.global_pool();
    b.fc("fc", 1000);
    return b.rows;
}

// Inception-ResNet-v2 per the widely used TensorFlow implementation,
// evaluated at 224x224.
LayerTable inception_resnet_v2_table() {
    TableBuilder b(3, 224, 224);
    b.conv("stem.conv1", 32, 3, 2, 0);
    b.conv("stem.conv2", 32, 3, 1, 0);
    b.conv("stem.conv3", 64, 3, 1, 1);
    b.pool(3, 2);
    b.conv("stem.conv4", 80, 1, 1, 0);
    b.conv("stem.conv5", 192, 3, 1, 0);
    b.pool(3, 2);

    // mixed_5b: four branches concatenated to 320 channels
    const std::size_t mixed_in = b.c, mh = b.h, mw = b.w;
    auto branch_conv = [&](const std::string& name, std::size_t in_c, std::size_t out_c,
                           std::size_t k, std::size_t pad) {
        b.rows.push_back({name, in_c * mh * mw, out_c * mh * mw, out_c * in_c * k * k});
    };
    branch_conv("mixed5b.b0.conv", mixed_in, 96, 1, 0);
    branch_conv("mixed5b.b1.conv1", mixed_in, 48, 1, 0);
    branch_conv("mixed5b.b1.conv2", 48, 64, 5, 2);
    branch_conv("mixed5b.b2.conv1", mixed_in, 64, 1, 0);
    branch_conv("mixed5b.b2.conv2", 64, 96, 3, 1);
    branch_conv("mixed5b.b2.conv3", 96, 96, 3, 1);
    branch_conv("mixed5b.b3.conv", mixed_in, 64, 1, 0);
    b.c = 320;

    struct ConvDims {
        std::size_t out_c, kh, kw;
    };
    auto res_branch = [&](const std::string& name, std::size_t in_c,
                          std::initializer_list<ConvDims> convs) {
        // chains of convolutions at constant spatial size
        std::size_t cur = in_c;
        int i = 0;
        for (const auto& cd : convs) {
            b.rows.push_back({cat(name, ".conv", ++i), cur * b.h * b.w, cd.out_c * b.h * b.w,
                              cd.out_c * cur * cd.kh * cd.kw});
            cur = cd.out_c;
        }
    };

    for (int i = 0; i < 10; ++i) {
        const std::string base = cat("block35.", i);
        res_branch(base + ".b0", 320, {{32, 1, 1}});
        res_branch(base + ".b1", 320, {{32, 1, 1}, {32, 3, 3}});
        res_branch(base + ".b2", 320, {{32, 1, 1}, {48, 3, 3}, {64, 3, 3}});
        res_branch(base + ".join", 128, {{320, 1, 1}});
    }

    // mixed_6a reduction: 35 -> 17 grid, 1088 channels
    {
        const std::size_t ih = b.h, iw = b.w;
        const std::size_t oh = (ih - 3) / 2 + 1, ow = (iw - 3) / 2 + 1;
        b.rows.push_back({"mixed6a.b0.conv", 320 * ih * iw, 384 * oh * ow, 384 * 320 * 9});
        b.rows.push_back({"mixed6a.b1.conv1", 320 * ih * iw, 256 * ih * iw, 256 * 320 * 1});
        b.rows.push_back({"mixed6a.b1.conv2", 256 * ih * iw, 256 * ih * iw, 256 * 256 * 9});
        b.rows.push_back({"mixed6a.b1.conv3", 256 * ih * iw, 384 * oh * ow, 384 * 256 * 9});
        b.h = oh;
        b.w = ow;
        b.c = 1088;
    }

    for (int i = 0; i < 20; ++i) {
        const std::string base = cat("block17.", i);
        res_branch(base + ".b0", 1088, {{192, 1, 1}});
        res_branch(base + ".b1", 1088, {{128, 1, 1}, {160, 1, 7}, {192, 7, 1}});
        res_branch(base + ".join", 384, {{1088, 1, 1}});
    }

    // mixed_7a reduction: 17 -> 8 grid, 2080 channels
    {
        const std::size_t ih = b.h, iw = b.w;
        const std::size_t oh = (ih - 3) / 2 + 1, ow = (iw - 3) / 2 + 1;
        b.rows.push_back({"mixed7a.b0.conv1", 1088 * ih * iw, 256 * ih * iw, 256 * 1088});
        b.rows.push_back({"mixed7a.b0.conv2", 256 * ih * iw, 384 * oh * ow, 384 * 256 * 9});
        b.rows.push_back({"mixed7a.b1.conv1", 1088 * ih * iw, 256 * ih * iw, 256 * 1088});
        b.rows.push_back({"mixed7a.b1.conv2", 256 * ih * iw, 288 * oh * ow, 288 * 256 * 9});
        b.rows.push_back({"mixed7a.b2.conv1", 1088 * ih * iw, 256 * ih * iw, 256 * 1088});
        b.rows.push_back({"mixed7a.b2.conv2", 256 * ih * iw, 288 * ih * iw, 288 * 256 * 9});
        b.rows.push_back({"mixed7a.b2.conv3", 288 * ih * iw, 320 * oh * ow, 320 * 288 * 9});
        b.h = oh;
        b.w = ow;
        b.c = 2080;
    }

    for (int i = 0; i < 10; ++i) {
        const std::string base = cat("block8.", i);
        res_branch(base + ".b0", 2080, {{192, 1, 1}});
        res_branch(base + ".b1", 2080, {{192, 1, 1}, {224, 1, 3}, {256, 3, 1}});
        res_branch(base + ".join", 448, {{2080, 1, 1}});
    }

    b.conv("conv_final", 1536, 1, 1, 0);
    b.global_pool();
    b.fc("fc", 1000);
    return b.rows;
}

} // namespace

std::vector<std::string> available_layer_tables() {
    return {"alexnet", "inception_resnet_v2", "resnet50", "resnet101"};
}

LayerTable named_layer_table(const std::string& name) {
    if (name == "alexnet") return alexnet_table();
    if (name == "resnet50") return resnet_bottleneck_table({3, 4, 6, 3});
    if (name == "resnet101") return resnet_bottleneck_table({3, 4, 23, 3});
    if (name == "inception_resnet_v2") return inception_resnet_v2_table();
    std::string options;
    for (const auto& n : available_layer_tables()) options += " " + n;
    throw ConfigError(cat("unknown layer table '", name, "'; available:", options));
}

LayerTable model_layer_table(const ModelSpec& spec) {
    spec.validate();
    if (spec.family == "mnist_mlp") {
        TableBuilder b(1, 1, static_cast<std::size_t>(spec.widths.front()));
        for (std::size_t i = 1; i < spec.widths.size(); ++i)
            b.fc(cat("fc", i), static_cast<std::size_t>(spec.widths[i]));
        return b.rows;
    }
    if (spec.family == "mnist_convnet") {
        TableBuilder b(1, 28, 28);
        b.conv("conv1", static_cast<std::size_t>(spec.widths[0]), 4, 2, 1, true);
        b.conv("conv2", static_cast<std::size_t>(spec.widths[1]), 4, 2, 1, true);
        b.fc("fc1", static_cast<std::size_t>(spec.widths[2]));
        b.fc("fc2", static_cast<std::size_t>(spec.num_classes));
        return b.rows;
    }
    // cifar_resnet
    TableBuilder b(3, 32, 32);
    b.conv("conv1", 16, 3, 1, 1);
    const std::size_t widths[3] = {16, 32, 64};
    for (int s = 0; s < 3; ++s)
        for (int blk = 0; blk < spec.n; ++blk) {
            const std::string base = cat("stage", s + 1, ".block", blk);
            const std::size_t out_c = widths[s];
            const bool down = s > 0 && blk == 0;
            b.conv(base + ".conv1", out_c, 3, 1, 1);
            if (down) {
                b.h = (b.h + 1) / 2;
                b.w = (b.w + 1) / 2;
                // the conv above ran at full resolution before subsampling
                b.rows.back().ofm_elems = out_c * b.h * b.w;
            }
            b.conv(base + ".conv2", out_c, 3, 1, 1);
        }
    b.global_pool();
    b.fc("fc", static_cast<std::size_t>(spec.num_classes));
    return b.rows;
}

double FootprintReport::weight_total_bytes() const {
    double total = 0;
    for (const auto& r : rows) total += r.weight_bytes;
    return total;
}

FootprintReport footprint(const LayerTable& table, const std::vector<int>& weight_bits_per_layer,
                          int act_bits, const std::vector<int>& batch_sizes) {
    if (weight_bits_per_layer.size() != table.size())
        throw ShapeError(cat("per-layer bits list holds ", weight_bits_per_layer.size(),
                             " entries for ", table.size(), " layers"));
    if (act_bits != 8 && act_bits != 32)
        throw ConfigError(cat("activation bits must be 8 or 32, got ", act_bits));
    FootprintReport rep;
    rep.act_bits = act_bits;
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto& l = table[i];
        const int wb = weight_bits_per_layer[i];
        FootprintRow row;
        row.name = l.name;
        row.ifm_elems = l.ifm_elems;
        row.ofm_elems = l.ofm_elems;
        row.weight_elems = l.weight_elems;
        row.weight_bits = wb;
        row.ifm_bytes = double(l.ifm_elems) * act_bits / 8.0;
        row.ofm_bytes = double(l.ofm_elems) * act_bits / 8.0;
        row.weight_bytes = double(l.weight_elems) * wb / 8.0;
        rep.rows.push_back(row);
    }
    for (int batch : batch_sizes) {
        FootprintTotals t;
        t.batch = batch;
        t.max_ifm_bytes = t.max_ofm_bytes = t.weight_bytes = 0;
        for (const auto& r : rep.rows) {
            t.max_ifm_bytes = std::max(t.max_ifm_bytes, r.ifm_bytes * batch);
            t.max_ofm_bytes = std::max(t.max_ofm_bytes, r.ofm_bytes * batch);
            t.weight_bytes += r.weight_bytes;
        }
        t.total_bytes = t.max_ifm_bytes + t.max_ofm_bytes + t.weight_bytes;
        rep.totals.push_back(t);
    }
    return rep;
}

std::vector<int> uniform_weight_bits(const LayerTable& table, int bits, bool exempt_first_last) {
    std::vector<int> out(table.size(), bits);
    if (exempt_first_last && !out.empty()) {
        out.front() = 32;
        out.back() = 32;
    }
    return out;
}

SparsityEquivalence sparse_equivalence(int weight_bits, int index_bits) {
    if (weight_bits >= 32)
        throw ConfigError(cat("sparsity equivalence needs a sub-32-bit model, got ", weight_bits));
    if (weight_bits < 1) throw ConfigError(cat("weight bits must be >= 1, got ", weight_bits));
    if (index_bits < 0) throw ConfigError("index bits must be >= 0");
    SparsityEquivalence eq;
    eq.raw = 1.0 - double(weight_bits) / 32.0;
    eq.index_adjusted = 1.0 - double(weight_bits) / (32.0 + double(index_bits));
    return eq;
}

std::string render_footprint_table(const FootprintReport& report) {
    std::ostringstream out;
    out << std::left << std::setw(24) << "layer" << std::right << std::setw(12) << "ifm_elems"
        << std::setw(12) << "ofm_elems" << std::setw(14) << "weight_elems" << std::setw(7)
        << "w_bits" << std::setw(16) << "weight_bytes" << "\n";
    for (const auto& r : report.rows)
        out << std::left << std::setw(24) << r.name << std::right << std::setw(12) << r.ifm_elems
            << std::setw(12) << r.ofm_elems << std::setw(14) << r.weight_elems << std::setw(7)
            << r.weight_bits << std::setw(16) << std::fixed << std::setprecision(1)
            << r.weight_bytes << "\n";
    out << "activation bits: " << report.act_bits << "\n";
    for (const auto& t : report.totals) {
        out << "batch " << t.batch << ": max_ifm " << std::fixed << std::setprecision(1)
            << t.max_ifm_bytes << " B, max_ofm " << t.max_ofm_bytes << " B, weights "
            << t.weight_bytes << " B, total " << t.total_bytes << " B\n";
    }
    return out.str();
}

} // namespace apprentice
