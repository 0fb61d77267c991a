#pragma once

#include <iosfwd>

#include "apprentice/io_formats.hpp"
#include "apprentice/run_types.hpp"

namespace apprentice {

struct SchemeOutput {
    std::string student_checkpoint;
    std::string teacher_checkpoint; // scheme A only
    std::string metrics_path;
    std::vector<EpochRecord> records;
};

struct RunHooks {
    std::ostream* log = nullptr;                 // progress lines
    std::vector<std::string>* warnings = nullptr; // collected warnings (also logged)
};

// Dispatches on cfg.scheme:
//   A - teacher and student train jointly from scratch on the full loss.
//   B - a trained teacher (live checkpoint or logit cache) guides a student
//       trained from scratch; the teacher hard-label term drops out and the
//       teacher is never updated. Optional warm start trains the student at
//       full precision first and lowers the precision afterwards.
//   C - the student starts from full-precision prime weights, the precision
//       is lowered, and it fine-tunes on a staged low learning-rate schedule.
SchemeOutput run_scheme(const RunConfig& cfg, const RunHooks& hooks = {});

// Runs the teacher over the training split in id order and stores one exact
// float32 logit row per sample. Rejected when augmentation is on: cached
// logits would not match the augmented views.
void cache_teacher_logits(const std::string& teacher_checkpoint, const DataConfig& data,
                          const std::string& out_path, int batch_size = 64);

double evaluate_top1_error(Model& model, const Dataset& data, const NormStats& stats,
                           std::size_t batch_size);

// First epoch whose eval accuracy reaches `frac` of the final accuracy.
int convergence_epoch(const std::vector<EpochRecord>& records, double frac = 0.97);

} // namespace apprentice
