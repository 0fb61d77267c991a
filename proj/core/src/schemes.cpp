#include "apprentice/schemes.hpp"

#include <chrono>
#include <filesystem>
#include <ostream>

#include "apprentice/rng.hpp"
#include "apprentice/sgd.hpp"

namespace apprentice {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_s(Clock::time_point since) {
    return std::chrono::duration<double>(Clock::now() - since).count();
}

void warn(const RunHooks& hooks, const std::string& msg) {
    if (hooks.warnings) hooks.warnings->push_back(msg);
    if (hooks.log) *hooks.log << "warning: " << msg << "\n";
}

void log_line(const RunHooks& hooks, const std::string& msg) {
    if (hooks.log) *hooks.log << msg << "\n";
}

void check_teacher_capacity(Model& teacher, Model& student, const RunHooks& hooks) {
    const auto t = count_params_and_layers(teacher);
    const auto s = count_params_and_layers(student);
    if (t.weight_layer_count < s.weight_layer_count || t.param_count < s.param_count)
        warn(hooks, cat("teacher (", t.weight_layer_count, " layers, ", t.param_count,
                        " params) is smaller than the student (", s.weight_layer_count,
                        " layers, ", s.param_count,
                        " params); expect weaker guidance from a lower-capacity teacher"));
}

TensorPtr<float> cached_logits_for(const LogitCache& cache, const Batch& batch) {
    const std::size_t c = static_cast<std::size_t>(cache.num_classes);
    auto out = make_tensor<float>({batch.ids.size(), c});
    for (std::size_t i = 0; i < batch.ids.size(); ++i) {
        const auto* row = cache.find(batch.ids[i]);
        if (!row) throw IoError(cat("sample id ", batch.ids[i], " is not in the logit cache"));
        std::copy(row->begin(), row->end(), out->data.begin() + i * c);
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> checkpoint_meta(const RunConfig& cfg,
                                                                 const QuantSpec& quant,
                                                                 int epoch) {
    return {
        {"seed", std::to_string(cfg.seed)},
        {"epoch", std::to_string(epoch)},
        {"quant", quant.str()},
        {"scheme", scheme_name(cfg.scheme)},
        {"config", render_config(cfg)},
    };
}

struct EpochStats {
    double loss_total = 0, teacher_ce = 0, student_ce = 0, distill_ce = 0;
    bool has_teacher_ce = false, has_distill = false;
    std::size_t batches = 0;
    std::size_t correct = 0, seen = 0;

    void add(const LossBreakdown<float>& loss, const Batch& batch,
             const TensorPtr<float>& student_logits) {
        loss_total += loss.total->data[0];
        if (loss.teacher_ce) {
            teacher_ce += *loss.teacher_ce;
            has_teacher_ce = true;
        }
        if (loss.student_ce) student_ce += *loss.student_ce;
        if (loss.distill_ce) {
            distill_ce += *loss.distill_ce;
            has_distill = true;
        }
        ++batches;
        for (std::size_t i = 0; i < batch.labels.size(); ++i) {
            if (argmax_row(*student_logits, i) == static_cast<std::size_t>(batch.labels[i]))
                ++correct;
            ++seen;
        }
    }

    EpochRecord record(int epoch, double seconds) const {
        EpochRecord r;
        r.epoch = epoch;
        r.split = "train";
        r.top1_error = seen ? 100.0 * (1.0 - double(correct) / double(seen)) : 0.0;
        const double b = batches ? double(batches) : 1.0;
        r.loss_total = loss_total / b;
        if (has_teacher_ce) r.loss_teacher_ce = teacher_ce / b;
        r.loss_student_ce = student_ce / b;
        if (has_distill) r.loss_distill = distill_ce / b;
        r.seconds = seconds;
        return r;
    }
};

struct TrainContext {
    const RunConfig& cfg;
    const RunHooks& hooks;
    Dataset train;
    Dataset test;
    NormStats stats;
    std::unique_ptr<Model> teacher; // null when running purely from a cache
    std::unique_ptr<Model> student;
    LogitCache cache;
    bool use_cache = false;
    bool teacher_trainable = false;
};

// Shared epoch loop for all three schemes. The student always trains; the
// teacher trains only under scheme A.
std::vector<EpochRecord> train_epochs(TrainContext& ctx, int quantize_after_epoch) {
    const RunConfig& cfg = ctx.cfg;
    const auto schedule = cfg.resolved_schedule();
    const int total_epochs = cfg.total_epochs();

    auto student_params = ctx.student->trainable_params();
    SgdState<float> student_opt(1.0f, static_cast<float>(cfg.momentum));
    std::vector<TensorPtr<float>> teacher_params;
    std::unique_ptr<SgdState<float>> teacher_opt;
    if (ctx.teacher_trainable) {
        teacher_params = ctx.teacher->trainable_params();
        teacher_opt = std::make_unique<SgdState<float>>(1.0f, static_cast<float>(cfg.momentum));
    }

    BatchIterator iter(ctx.train, ctx.stats, ctx.train.num_classes,
                       static_cast<std::size_t>(cfg.batch_size), cfg.seed, true,
                       cfg.data.augment);

    std::vector<EpochRecord> records;
    int epoch = 0;
    for (std::size_t stage_idx = 0; stage_idx < schedule.size(); ++stage_idx) {
        const float lr = static_cast<float>(schedule[stage_idx].lr);
        student_opt.learning_rate = lr;
        if (teacher_opt) teacher_opt->learning_rate = lr;
        for (int e = 0; e < schedule[stage_idx].epochs; ++e) {
            ++epoch;
            if (epoch == quantize_after_epoch + 1 && quantize_after_epoch > 0) {
                apply_policy(*ctx.student, cfg.student_quant);
                log_line(ctx.hooks, cat("epoch ", epoch, ": lowering student precision to ",
                                        cfg.student_quant.str()));
            }
            const auto epoch_start = Clock::now();
            iter.restart(Rng::derive(cfg.seed, 0x65706f6368ull, static_cast<std::uint64_t>(epoch)));
            EpochStats epoch_stats;
            while (auto batch = iter.next()) {
                Tape<float> tape;
                zero_grads(student_params);
                if (ctx.teacher_trainable) zero_grads(teacher_params);

                TensorPtr<float> teacher_logits;
                if (ctx.use_cache)
                    teacher_logits = cached_logits_for(ctx.cache, *batch);
                else
                    teacher_logits = ctx.teacher->forward(
                        tape, batch->input, ctx.teacher_trainable ? Mode::Train : Mode::Eval);
                auto student_logits = ctx.student->forward(tape, batch->input, Mode::Train);

                auto teacher_pred = Prediction<float>::from_logits(tape, teacher_logits);
                auto student_pred = Prediction<float>::from_logits(tape, student_logits);
                auto loss = apprentice_loss(tape, batch->onehot, teacher_pred, student_pred,
                                            cfg.distill, ctx.teacher_trainable);

                auto total = loss.total;
                if (cfg.weight_decay > 0) {
                    auto decay_set = ctx.student->decay_params();
                    if (ctx.teacher_trainable) {
                        auto t = ctx.teacher->decay_params();
                        decay_set.insert(decay_set.end(), t.begin(), t.end());
                    }
                    auto penalty =
                        l2_penalty(tape, decay_set, static_cast<float>(cfg.weight_decay));
                    total = weighted_sum<float>(tape, {{1.0f, total}, {1.0f, penalty}});
                }
                tape.backward(total);
                sgd_step(student_params, student_opt);
                if (ctx.teacher_trainable) sgd_step(teacher_params, *teacher_opt);
                epoch_stats.add(loss, *batch, student_logits);
            }
            const double train_seconds = elapsed_s(epoch_start);
            records.push_back(epoch_stats.record(epoch, train_seconds));

            const auto eval_start = Clock::now();
            EpochRecord ev;
            ev.epoch = epoch;
            ev.split = "eval";
            ev.top1_error = evaluate_top1_error(*ctx.student, ctx.test, ctx.stats,
                                                static_cast<std::size_t>(cfg.batch_size));
            ev.seconds = elapsed_s(eval_start);
            records.push_back(ev);
            log_line(ctx.hooks, cat("epoch ", epoch, "/", total_epochs, " lr ", lr,
                                    " train loss ", *records[records.size() - 2].loss_total,
                                    " eval top1 error ", ev.top1_error, "%"));
        }
    }
    return records;
}

SchemeOutput finish_run(const RunConfig& cfg, TrainContext& ctx,
                        std::vector<EpochRecord> records) {
    std::filesystem::create_directories(cfg.out_dir);
    SchemeOutput out;
    out.records = std::move(records);
    out.metrics_path = cfg.out_dir + "/metrics.ndjson";
    write_metrics(out.metrics_path, out.records);
    out.student_checkpoint = cfg.out_dir + "/student.appr";
    save_checkpoint(out.student_checkpoint, *ctx.student,
                    checkpoint_meta(cfg, cfg.student_quant, cfg.total_epochs()));
    if (cfg.scheme == Scheme::A) {
        out.teacher_checkpoint = cfg.out_dir + "/teacher.appr";
        save_checkpoint(out.teacher_checkpoint, *ctx.teacher,
                        checkpoint_meta(cfg, cfg.teacher_quant, cfg.total_epochs()));
    }
    return out;
}

} // namespace

double evaluate_top1_error(Model& model, const Dataset& data, const NormStats& stats,
                           std::size_t batch_size) {
    BatchIterator iter(data, stats, data.num_classes, batch_size, 0, false, false);
    std::size_t correct = 0, seen = 0;
    while (auto batch = iter.next()) {
        Tape<float> tape; // nothing records: eval inputs carry no grads
        auto logits = model.forward(tape, batch->input, Mode::Eval);
        for (std::size_t i = 0; i < batch->labels.size(); ++i) {
            if (argmax_row(*logits, i) == static_cast<std::size_t>(batch->labels[i])) ++correct;
            ++seen;
        }
    }
    return seen ? 100.0 * (1.0 - double(correct) / double(seen)) : 100.0;
}

int convergence_epoch(const std::vector<EpochRecord>& records, double frac) {
    double final_acc = 0;
    int last_epoch = 0;
    for (const auto& r : records)
        if (r.split == "eval" && r.epoch > last_epoch) {
            last_epoch = r.epoch;
            final_acc = 100.0 - r.top1_error;
        }
    const double target = frac * final_acc;
    for (const auto& r : records)
        if (r.split == "eval" && (100.0 - r.top1_error) >= target) return r.epoch;
    return last_epoch;
}

void cache_teacher_logits(const std::string& teacher_checkpoint, const DataConfig& data,
                          const std::string& out_path, int batch_size) {
    if (data.augment)
        throw ConfigError("cannot cache logits with augmentation on: cached values would not "
                          "match the augmented views");
    auto teacher = load_checkpoint(teacher_checkpoint);
    teacher->set_requires_grad(false);
    Dataset train = load_split(data, true);
    const NormStats stats = compute_norm_stats(train);

    LogitCache cache;
    cache.num_classes = train.num_classes;
    BatchIterator iter(train, stats, train.num_classes, static_cast<std::size_t>(batch_size), 0,
                       false, false);
    while (auto batch = iter.next()) {
        Tape<float> tape;
        auto logits = teacher->forward(tape, batch->input, Mode::Eval);
        const std::size_t c = logits->shape.back();
        for (std::size_t i = 0; i < batch->ids.size(); ++i) {
            std::vector<float> row(logits->data.begin() + i * c,
                                   logits->data.begin() + (i + 1) * c);
            cache.records.push_back({batch->ids[i], std::move(row)});
        }
    }
    write_logit_cache(out_path, cache);
}

SchemeOutput run_scheme(const RunConfig& cfg, const RunHooks& hooks) {
    cfg.validate();
    TrainContext ctx{cfg, hooks};
    ctx.train = load_split(cfg.data, true);
    ctx.test = load_split(cfg.data, false);
    ctx.stats = compute_norm_stats(ctx.train);

    int quantize_after_epoch = 0; // 0 = policy applied before the first epoch
    switch (cfg.scheme) {
        case Scheme::A: {
            ctx.teacher = build_model(cfg.teacher, Rng::derive(cfg.seed, 0x74656163686572ull));
            ctx.student = build_model(cfg.student, Rng::derive(cfg.seed, 0x73747564656e74ull));
            ctx.teacher_trainable = true;
            check_teacher_capacity(*ctx.teacher, *ctx.student, hooks);
            if (!cfg.student_quant.is_full_precision())
                apply_policy(*ctx.student, cfg.student_quant);
            break;
        }
        case Scheme::B: {
            ctx.student = build_model(cfg.student, Rng::derive(cfg.seed, 0x73747564656e74ull));
            if (!cfg.logit_cache.empty()) {
                if (cfg.data.augment)
                    throw ConfigError("cached-logit training requires augmentation off");
                ctx.cache = read_logit_cache(cfg.logit_cache);
                ctx.use_cache = true;
                if (ctx.cache.num_classes != ctx.train.num_classes)
                    throw ConfigError(cat("logit cache has ", ctx.cache.num_classes,
                                          " classes, dataset has ", ctx.train.num_classes));
            } else {
                ctx.teacher = load_checkpoint(cfg.teacher_checkpoint);
                ctx.teacher->set_requires_grad(false);
                check_teacher_capacity(*ctx.teacher, *ctx.student, hooks);
            }
            if (cfg.warm_start_epochs > 0 && !cfg.student_quant.is_full_precision() &&
                cfg.warm_start_epochs >= cfg.total_epochs())
                throw ConfigError(cat("warm_start_epochs (", cfg.warm_start_epochs,
                                      ") leaves no epochs at lowered precision (total ",
                                      cfg.total_epochs(), ")"));
            if (!cfg.student_quant.is_full_precision()) {
                if (cfg.warm_start_epochs > 0)
                    quantize_after_epoch = cfg.warm_start_epochs;
                else
                    apply_policy(*ctx.student, cfg.student_quant);
            }
            break;
        }
        case Scheme::C: {
            const Checkpoint prime = read_checkpoint(cfg.student_checkpoint);
            ctx.student = build_model(prime.spec, 0);
            load_into_model(prime, *ctx.student);
            ctx.teacher = load_checkpoint(cfg.teacher_checkpoint);
            ctx.teacher->set_requires_grad(false);
            check_teacher_capacity(*ctx.teacher, *ctx.student, hooks);
            if (!cfg.student_quant.is_full_precision())
                apply_policy(*ctx.student, cfg.student_quant);
            break;
        }
    }

    auto records = train_epochs(ctx, quantize_after_epoch);
    return finish_run(cfg, ctx, std::move(records));
}

} // namespace apprentice
