#include "apprentice/run_types.hpp"

namespace apprentice {

std::string scheme_name(Scheme s) {
    switch (s) {
        case Scheme::A: return "A";
        case Scheme::B: return "B";
        case Scheme::C: return "C";
    }
    return "?";
}

Scheme parse_scheme(const std::string& s) {
    if (s == "A" || s == "a") return Scheme::A;
    if (s == "B" || s == "b") return Scheme::B;
    if (s == "C" || s == "c") return Scheme::C;
    throw ConfigError(cat("unknown scheme '", s, "' (expected A, B or C)"));
}

std::vector<LrStage> RunConfig::resolved_schedule() const {
    if (!lr_schedule.empty()) return lr_schedule;
    if (scheme == Scheme::C) {
        // staged fine-tuning default
        return {{1e-3, 12}, {1e-4, 8}, {1e-5, 5}};
    }
    return {{lr, epochs}};
}

int RunConfig::total_epochs() const {
    int total = 0;
    for (const auto& st : resolved_schedule()) total += st.epochs;
    return total;
}

void RunConfig::validate() const {
    distill.validate();
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    for (const auto& st : lr_schedule) {
        if (st.lr <= 0) throw ConfigError("lr_schedule rates must be positive");
        if (st.epochs < 0) throw ConfigError("lr_schedule epoch counts must be >= 0");
    }
    if (lr_schedule.empty() && scheme != Scheme::C && lr <= 0)
        throw ConfigError("lr must be positive");
    if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0,1)");
    if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
    if (!teacher_quant.is_full_precision())
        throw ConfigError(cat("teacher must stay full precision, got teacher.quant = ",
                              teacher_quant.str()));
    if (warm_start_epochs < 0) throw ConfigError("warm_start_epochs must be >= 0");
    if (warm_start_epochs > 0 && scheme != Scheme::B)
        throw ConfigError("warm_start_epochs is only valid for scheme B");
    if (data.dir.empty()) throw ConfigError("data.dir is required");

    switch (scheme) {
        case Scheme::A:
            teacher.validate();
            student.validate();
            break;
        case Scheme::B:
            student.validate();
            if (teacher_checkpoint.empty() && logit_cache.empty())
                throw ConfigError(
                    "scheme B requires teacher.checkpoint or logit_cache (trained teacher "
                    "or cached logits)");
            break;
        case Scheme::C:
            if (student_checkpoint.empty())
                throw ConfigError(
                    "scheme C requires student.checkpoint (full-precision prime weights)");
            if (teacher_checkpoint.empty())
                throw ConfigError("scheme C requires teacher.checkpoint (trained teacher)");
            break;
    }
}

} // namespace apprentice
