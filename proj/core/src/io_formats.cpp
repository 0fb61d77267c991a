#include "apprentice/io_formats.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace apprentice {

namespace wire {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

void Cursor::fail(const std::string& what) const {
    throw IoError(cat(context, ": ", what, " at offset ", off));
}

void Cursor::bytes(void* dst, std::size_t n) {
    if (off + n > buf.size()) fail(cat("truncated (need ", n, " bytes, have ", buf.size() - off, ")"));
    std::memcpy(dst, buf.data() + off, n);
    off += n;
}

std::uint32_t Cursor::u32() {
    std::uint8_t b[4];
    bytes(b, 4);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

std::uint64_t Cursor::u64() {
    std::uint32_t lo = u32();
    std::uint64_t hi = u32();
    return (hi << 32) | lo;
}

float Cursor::f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

double Cursor::f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

std::string Cursor::string() {
    const std::uint32_t len = u32();
    if (off + len > buf.size()) fail(cat("truncated string of length ", len));
    std::string s(reinterpret_cast<const char*>(buf.data() + off), len);
    off += len;
    return s;
}

void Cursor::expect_end() {
    if (off != buf.size()) fail(cat("trailing bytes (", buf.size() - off, ")"));
}

std::vector<std::uint8_t> read_file(const std::string& path) {
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

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(cat("cannot write ", path));
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(cat("short write on ", path));
}

} // namespace wire

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint32_t kCacheVersion = 1;

void put_record(std::vector<std::uint8_t>& out, const std::string& name,
                const std::vector<std::size_t>& shape, const std::vector<float>& data) {
    wire::put_string(out, name);
    wire::put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (auto e : shape) wire::put_u64(out, e);
    wire::put_u64(out, data.size() * 4ull);
    for (float v : data) wire::put_f32(out, v);
}

ParamRecord read_record(wire::Cursor& c) {
    ParamRecord r;
    r.name = c.string();
    const std::uint32_t rank = c.u32();
    for (std::uint32_t i = 0; i < rank; ++i) r.shape.push_back(c.u64());
    const std::uint64_t payload = c.u64();
    if (payload % 4 != 0) c.fail(cat("payload length ", payload, " is not a multiple of 4"));
    if (payload / 4 != shape_numel(r.shape))
        c.fail(cat("record '", r.name, "' payload holds ", payload / 4, " values but shape ",
                   shape_str(r.shape), " needs ", shape_numel(r.shape)));
    r.data.resize(payload / 4);
    for (auto& v : r.data) v = c.f32();
    return r;
}

void put_spec(std::vector<std::uint8_t>& out, const ModelSpec& spec) {
    wire::put_string(out, spec.family);
    wire::put_u32(out, static_cast<std::uint32_t>(spec.n));
    wire::put_u32(out, static_cast<std::uint32_t>(spec.num_classes));
    wire::put_u32(out, static_cast<std::uint32_t>(spec.widths.size()));
    for (int w : spec.widths) wire::put_u32(out, static_cast<std::uint32_t>(w));
}

ModelSpec read_spec(wire::Cursor& c) {
    ModelSpec spec;
    spec.family = c.string();
    spec.n = static_cast<int>(c.u32());
    spec.num_classes = static_cast<int>(c.u32());
    const std::uint32_t nw = c.u32();
    for (std::uint32_t i = 0; i < nw; ++i) spec.widths.push_back(static_cast<int>(c.u32()));
    return spec;
}

} // namespace

const std::string* Checkpoint::find_meta(const std::string& key) const {
    for (const auto& [k, v] : metadata)
        if (k == key) return &v;
    return nullptr;
}

void save_checkpoint(const std::string& path, Model& model,
                     const std::vector<std::pair<std::string, std::string>>& metadata,
                     const std::vector<ParamRecord>& opt_state) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'A', 'P', 'P', 'R'});
    wire::put_u32(out, kCheckpointVersion);
    put_spec(out, model.spec());
    wire::put_u32(out, static_cast<std::uint32_t>(metadata.size()));
    for (const auto& [k, v] : metadata) {
        wire::put_string(out, k);
        wire::put_string(out, v);
    }
    const auto state = model.named_state();
    wire::put_u32(out, static_cast<std::uint32_t>(state.size()));
    for (const auto& p : state) put_record(out, p.name, p.tensor->shape, p.tensor->data);
    wire::put_u32(out, static_cast<std::uint32_t>(opt_state.size()));
    for (const auto& r : opt_state) put_record(out, r.name, r.shape, r.data);
    wire::write_file(path, out);
}

Checkpoint read_checkpoint(const std::string& path) {
    const auto buf = wire::read_file(path);
    wire::Cursor c{buf, 0, path};
    char magic[4];
    c.bytes(magic, 4);
    if (std::memcmp(magic, "APPR", 4) != 0) c.fail("not an APPR checkpoint (bad magic)");
    const std::uint32_t version = c.u32();
    if (version != kCheckpointVersion)
        c.fail(cat("unsupported checkpoint version ", version));
    Checkpoint ckpt;
    ckpt.spec = read_spec(c);
    const std::uint32_t n_meta = c.u32();
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        auto k = c.string();
        auto v = c.string();
        ckpt.metadata.push_back({std::move(k), std::move(v)});
    }
    const std::uint32_t n_params = c.u32();
    for (std::uint32_t i = 0; i < n_params; ++i) ckpt.params.push_back(read_record(c));
    const std::uint32_t n_opt = c.u32();
    for (std::uint32_t i = 0; i < n_opt; ++i) ckpt.opt_state.push_back(read_record(c));
    c.expect_end();
    return ckpt;
}

void load_into_model(const Checkpoint& ckpt, Model& model) {
    std::map<std::string, const ParamRecord*> by_name;
    for (const auto& r : ckpt.params) {
        if (!by_name.emplace(r.name, &r).second)
            throw IoError(cat("duplicate parameter record '", r.name, "'"));
    }
    auto state = model.named_state();
    for (const auto& p : state) {
        auto it = by_name.find(p.name);
        if (it == by_name.end())
            throw IoError(cat("checkpoint is missing parameter '", p.name, "'"));
        const ParamRecord& r = *it->second;
        if (r.shape != p.tensor->shape)
            throw IoError(cat("parameter '", p.name, "' has shape ", shape_str(r.shape),
                              " in checkpoint but the model expects ", shape_str(p.tensor->shape)));
        p.tensor->data = r.data;
        by_name.erase(it);
    }
    if (!by_name.empty())
        throw IoError(cat("checkpoint parameter '", by_name.begin()->first,
                          "' does not exist in the model"));
}

std::unique_ptr<Model> load_checkpoint(const std::string& path) {
    const Checkpoint ckpt = read_checkpoint(path);
    auto model = build_model(ckpt.spec, 0);
    load_into_model(ckpt, *model);
    return model;
}

const std::vector<float>* LogitCache::find(std::int64_t id) const {
    std::size_t lo = 0, hi = records.size();
    while (lo < hi) {
        const std::size_t mid = (lo + hi) / 2;
        if (records[mid].first < id)
            lo = mid + 1;
        else
            hi = mid;
    }
    if (lo < records.size() && records[lo].first == id) return &records[lo].second;
    return nullptr;
}

void write_logit_cache(const std::string& path, const LogitCache& cache) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'A', 'P', 'L', 'C'});
    wire::put_u32(out, kCacheVersion);
    wire::put_u32(out, static_cast<std::uint32_t>(cache.num_classes));
    wire::put_u64(out, cache.records.size());
    std::int64_t prev = -1;
    for (const auto& [id, logits] : cache.records) {
        if (id <= prev)
            throw IoError(cat("logit cache ids must be strictly increasing; ", id, " follows ",
                              prev, " (duplicate or unsorted sample id)"));
        prev = id;
        if (logits.size() != static_cast<std::size_t>(cache.num_classes))
            throw IoError(cat("logit record for sample ", id, " holds ", logits.size(),
                              " values, expected ", cache.num_classes));
        wire::put_u64(out, static_cast<std::uint64_t>(id));
        for (float v : logits) wire::put_f32(out, v);
    }
    wire::write_file(path, out);
}

LogitCache read_logit_cache(const std::string& path) {
    const auto buf = wire::read_file(path);
    wire::Cursor c{buf, 0, path};
    char magic[4];
    c.bytes(magic, 4);
    if (std::memcmp(magic, "APLC", 4) != 0) c.fail("not an APLC logit cache (bad magic)");
    const std::uint32_t version = c.u32();
    if (version != kCacheVersion) c.fail(cat("unsupported logit cache version ", version));
    LogitCache cache;
    cache.num_classes = static_cast<int>(c.u32());
    const std::uint64_t count = c.u64();
    std::int64_t prev = -1;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::int64_t id = static_cast<std::int64_t>(c.u64());
        if (id <= prev) c.fail(cat("ids not strictly increasing (", id, " after ", prev, ")"));
        prev = id;
        std::vector<float> logits(cache.num_classes);
        for (auto& v : logits) v = c.f32();
        cache.records.push_back({id, std::move(logits)});
    }
    c.expect_end();
    return cache;
}

// ---- config ----

namespace {

int to_int(const std::string& v, const std::string& key, int line) {
    try {
        std::size_t pos = 0;
        const int out = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError(cat("line ", line, ": bad integer '", v, "' for key ", key));
    }
}

double to_double(const std::string& v, const std::string& key, int line) {
    try {
        std::size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError(cat("line ", line, ": bad number '", v, "' for key ", key));
    }
}

bool to_bool(const std::string& v, const std::string& key, int line) {
    if (v == "true" || v == "on" || v == "1") return true;
    if (v == "false" || v == "off" || v == "0") return false;
    throw ConfigError(cat("line ", line, ": bad boolean '", v, "' for key ", key));
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::vector<int> to_widths(const std::string& v, const std::string& key, int line) {
    std::vector<int> out;
    for (const auto& part : split(v, ','))
        if (!part.empty()) out.push_back(to_int(part, key, line));
    if (out.empty()) throw ConfigError(cat("line ", line, ": empty width list for key ", key));
    return out;
}

std::vector<LrStage> to_schedule(const std::string& v, const std::string& key, int line) {
    // "1e-3:12,1e-4:8,1e-5:5"
    std::vector<LrStage> out;
    for (const auto& part : split(v, ',')) {
        const auto pieces = split(part, ':');
        if (pieces.size() != 2)
            throw ConfigError(cat("line ", line, ": bad schedule stage '", part, "' for key ", key,
                                  " (expected rate:epochs)"));
        out.push_back({to_double(pieces[0], key, line), to_int(pieces[1], key, line)});
    }
    return out;
}

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

} // namespace

void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value, int line) {
    try {
        if (key == "scheme") cfg.scheme = parse_scheme(value);
        else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(std::stoull(value));
        else if (key == "epochs") cfg.epochs = to_int(value, key, line);
        else if (key == "batch_size") cfg.batch_size = to_int(value, key, line);
        else if (key == "lr") cfg.lr = to_double(value, key, line);
        else if (key == "lr_schedule") cfg.lr_schedule = to_schedule(value, key, line);
        else if (key == "momentum") cfg.momentum = to_double(value, key, line);
        else if (key == "weight_decay") cfg.weight_decay = to_double(value, key, line);
        else if (key == "warm_start_epochs") cfg.warm_start_epochs = to_int(value, key, line);
        else if (key == "logit_cache") cfg.logit_cache = value;
        else if (key == "out_dir") cfg.out_dir = value;
        else if (key == "teacher.family") cfg.teacher.family = value;
        else if (key == "teacher.n") cfg.teacher.n = to_int(value, key, line);
        else if (key == "teacher.widths") cfg.teacher.widths = to_widths(value, key, line);
        else if (key == "teacher.num_classes") cfg.teacher.num_classes = to_int(value, key, line);
        else if (key == "teacher.checkpoint") cfg.teacher_checkpoint = value;
        else if (key == "teacher.quant") cfg.teacher_quant = QuantSpec::parse(value);
        else if (key == "student.family") cfg.student.family = value;
        else if (key == "student.n") cfg.student.n = to_int(value, key, line);
        else if (key == "student.widths") cfg.student.widths = to_widths(value, key, line);
        else if (key == "student.num_classes") cfg.student.num_classes = to_int(value, key, line);
        else if (key == "student.checkpoint") cfg.student_checkpoint = value;
        else if (key == "student.quant") cfg.student_quant = QuantSpec::parse(value);
        else if (key == "distill.alpha") cfg.distill.alpha = to_double(value, key, line);
        else if (key == "distill.beta") cfg.distill.beta = to_double(value, key, line);
        else if (key == "distill.gamma") cfg.distill.gamma = to_double(value, key, line);
        else if (key == "distill.tau") cfg.distill.tau = to_double(value, key, line);
        else if (key == "data.dir") cfg.data.dir = value;
        else if (key == "data.dataset") cfg.data.dataset = value;
        else if (key == "data.subset_per_class") cfg.data.subset_per_class = to_int(value, key, line);
        else if (key == "data.augment") cfg.data.augment = to_bool(value, key, line);
        else
            throw ConfigError(cat("line ", line, ": unknown config key '", key, "'"));
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(cat("line ", line, ": bad value '", value, "' for key ", key, ": ",
                              e.what()));
    }
}

RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    int line_no = 0;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(cat("line ", line_no, ": expected 'key = value', got '", line, "'"));
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(cat("line ", line_no, ": empty key"));
        set_config_key(cfg, key, value, line_no);
    }
    return cfg;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(cat("cannot open config ", path));
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string render_config(const RunConfig& cfg) {
    std::ostringstream out;
    out << "scheme = " << scheme_name(cfg.scheme) << "\n";
    out << "seed = " << cfg.seed << "\n";
    out << "epochs = " << cfg.epochs << "\n";
    out << "batch_size = " << cfg.batch_size << "\n";
    out << "lr = " << cfg.lr << "\n";
    if (!cfg.lr_schedule.empty()) {
        out << "lr_schedule = ";
        for (std::size_t i = 0; i < cfg.lr_schedule.size(); ++i) {
            if (i) out << ",";
            out << cfg.lr_schedule[i].lr << ":" << cfg.lr_schedule[i].epochs;
        }
        out << "\n";
    }
    out << "momentum = " << cfg.momentum << "\n";
    out << "weight_decay = " << cfg.weight_decay << "\n";
    if (cfg.warm_start_epochs > 0) out << "warm_start_epochs = " << cfg.warm_start_epochs << "\n";
    if (!cfg.logit_cache.empty()) out << "logit_cache = " << cfg.logit_cache << "\n";
    out << "out_dir = " << cfg.out_dir << "\n";
    auto spec_out = [&](const char* prefix, const ModelSpec& spec) {
        if (spec.family.empty()) return;
        out << prefix << ".family = " << spec.family << "\n";
        out << prefix << ".n = " << spec.n << "\n";
        if (!spec.widths.empty()) {
            out << prefix << ".widths = ";
            for (std::size_t i = 0; i < spec.widths.size(); ++i)
                out << (i ? "," : "") << spec.widths[i];
            out << "\n";
        }
        out << prefix << ".num_classes = " << spec.num_classes << "\n";
    };
    spec_out("teacher", cfg.teacher);
    if (!cfg.teacher_checkpoint.empty())
        out << "teacher.checkpoint = " << cfg.teacher_checkpoint << "\n";
    out << "teacher.quant = " << cfg.teacher_quant.str() << "\n";
    spec_out("student", cfg.student);
    if (!cfg.student_checkpoint.empty())
        out << "student.checkpoint = " << cfg.student_checkpoint << "\n";
    out << "student.quant = " << cfg.student_quant.str() << "\n";
    out << "distill.alpha = " << cfg.distill.alpha << "\n";
    out << "distill.beta = " << cfg.distill.beta << "\n";
    out << "distill.gamma = " << cfg.distill.gamma << "\n";
    out << "distill.tau = " << cfg.distill.tau << "\n";
    out << "data.dir = " << cfg.data.dir << "\n";
    out << "data.dataset = " << cfg.data.dataset << "\n";
    out << "data.subset_per_class = " << cfg.data.subset_per_class << "\n";
    out << "data.augment = " << (cfg.data.augment ? "true" : "false") << "\n";
    return out.str();
}

// ---- metrics ----

namespace {

using nlohmann::json;

json opt_to_json(const std::optional<double>& v) {
    if (v) return *v;
    return nullptr;
}

std::optional<double> json_to_opt(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

} // namespace

std::string metrics_line(const EpochRecord& rec) {
    json j;
    j["epoch"] = rec.epoch;
    j["split"] = rec.split;
    j["top1_error"] = rec.top1_error;
    j["loss_total"] = opt_to_json(rec.loss_total);
    j["loss_teacher_ce"] = opt_to_json(rec.loss_teacher_ce);
    j["loss_student_ce"] = opt_to_json(rec.loss_student_ce);
    j["loss_distill"] = opt_to_json(rec.loss_distill);
    j["seconds"] = rec.seconds;
    return j.dump();
}

EpochRecord parse_metrics_line(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw IoError(cat("bad metrics line: ", e.what()));
    }
    EpochRecord rec;
    rec.epoch = j.at("epoch").get<int>();
    rec.split = j.at("split").get<std::string>();
    rec.top1_error = j.at("top1_error").get<double>();
    rec.loss_total = json_to_opt(j, "loss_total");
    rec.loss_teacher_ce = json_to_opt(j, "loss_teacher_ce");
    rec.loss_student_ce = json_to_opt(j, "loss_student_ce");
    rec.loss_distill = json_to_opt(j, "loss_distill");
    rec.seconds = j.at("seconds").get<double>();
    return rec;
}

void write_metrics(const std::string& path, const std::vector<EpochRecord>& records) {
    std::ofstream out(path);
    if (!out) throw IoError(cat("cannot write metrics to ", path));
    for (const auto& r : records) out << metrics_line(r) << "\n";
    if (!out) throw IoError(cat("short write on ", path));
}

std::vector<EpochRecord> read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(cat("cannot open metrics ", path));
    std::vector<EpochRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        out.push_back(parse_metrics_line(line));
    }
    return out;
}

} // namespace apprentice
