#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "apprentice/models.hpp"
#include "apprentice/run_types.hpp"

namespace apprentice {

// ---- "APPR" checkpoint container ----
//
// magic "APPR" | u32 version | model spec echo | metadata pairs |
// named parameter records | optimizer-state records.
// Every count precedes its payload and all numbers are little-endian, so a
// truncated file is always detected.

struct ParamRecord {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<float> data;
};

struct Checkpoint {
    ModelSpec spec;
    std::vector<std::pair<std::string, std::string>> metadata;
    std::vector<ParamRecord> params;
    std::vector<ParamRecord> opt_state;

    const std::string* find_meta(const std::string& key) const;
};

void save_checkpoint(const std::string& path, Model& model,
                     const std::vector<std::pair<std::string, std::string>>& metadata,
                     const std::vector<ParamRecord>& opt_state = {});
Checkpoint read_checkpoint(const std::string& path);
// Strict name/shape match against the model's own state; first mismatch is
// reported by name.
void load_into_model(const Checkpoint& ckpt, Model& model);
// Convenience: rebuild the model from the spec echo and load.
std::unique_ptr<Model> load_checkpoint(const std::string& path);

// ---- "APLC" logit cache ----

struct LogitCache {
    int num_classes = 0;
    std::vector<std::pair<std::int64_t, std::vector<float>>> records; // ids strictly increasing

    const std::vector<float>* find(std::int64_t id) const;
};

void write_logit_cache(const std::string& path, const LogitCache& cache);
LogitCache read_logit_cache(const std::string& path);

// ---- config text ----

// One `key = value` per line, `#` starts a comment. Unknown keys are errors,
// not warnings. Absent distill keys take the defaults alpha=1, beta=0.5,
// gamma=0.5, tau=1.
RunConfig parse_config(const std::string& text);
RunConfig parse_config_file(const std::string& path);
// Applies one `key=value` override; same key set as the file format.
void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value,
                    int line_for_errors = 0);
// Canonical rendering of a resolved config, reparseable by parse_config.
std::string render_config(const RunConfig& cfg);

// ---- metrics stream: one self-describing JSON record per line ----

std::string metrics_line(const EpochRecord& rec);
EpochRecord parse_metrics_line(const std::string& line);
void write_metrics(const std::string& path, const std::vector<EpochRecord>& records);
std::vector<EpochRecord> read_metrics(const std::string& path);

// little-endian encode/decode helpers shared with the packed container
namespace wire {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
void put_f32(std::vector<std::uint8_t>& out, float v);
void put_f64(std::vector<std::uint8_t>& out, double v);
void put_string(std::vector<std::uint8_t>& out, const std::string& s);

struct Cursor {
    const std::vector<std::uint8_t>& buf;
    std::size_t off = 0;
    std::string context;

    std::uint32_t u32();
    std::uint64_t u64();
    float f32();
    double f64();
    std::string string();
    void bytes(void* dst, std::size_t n);
    void expect_end();
    [[noreturn]] void fail(const std::string& what) const;
};

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

} // namespace wire

} // namespace apprentice
