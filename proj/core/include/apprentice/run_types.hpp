#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "apprentice/data.hpp"
#include "apprentice/distill.hpp"
#include "apprentice/models.hpp"
#include "apprentice/quant.hpp"

namespace apprentice {

enum class Scheme { A, B, C };

std::string scheme_name(Scheme s);
Scheme parse_scheme(const std::string& s);

struct LrStage {
    double lr;
    int epochs;
};

// Everything a training run needs; parsed from `key = value` config text
// with CLI overrides applied on top (last wins).
struct RunConfig {
    Scheme scheme = Scheme::A;
    ModelSpec teacher;
    ModelSpec student;
    QuantSpec teacher_quant; // must stay full precision
    QuantSpec student_quant;
    DistillConfig distill;
    std::vector<LrStage> lr_schedule; // empty = constant `lr` over `epochs`
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int epochs = 10;
    int batch_size = 32;
    std::uint64_t seed = 1;
    int warm_start_epochs = 0;      // scheme B only
    std::string logit_cache;        // scheme B alternative to a live teacher
    std::string teacher_checkpoint; // schemes B and C
    std::string student_checkpoint; // scheme C full-precision prime
    DataConfig data;
    std::string out_dir = ".";

    std::vector<LrStage> resolved_schedule() const;
    int total_epochs() const;
    void validate() const; // throws ConfigError
};

struct EpochRecord {
    int epoch = 0;
    std::string split; // "train" or "eval"
    double top1_error = 0.0; // percent
    std::optional<double> loss_total;
    std::optional<double> loss_teacher_ce;
    std::optional<double> loss_student_ce;
    std::optional<double> loss_distill;
    double seconds = 0.0;

    bool operator==(const EpochRecord&) const = default;
};

} // namespace apprentice
