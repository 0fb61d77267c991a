// Command-line front end: train/eval/cache-logits/export/footprint/
// sparsity-equiv verbs over the core library. Exit codes: 0 success,
// 1 runtime failure, 2 usage or config error.

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "apprentice/deploy.hpp"
#include "apprentice/footprint.hpp"
#include "apprentice/io_formats.hpp"
#include "apprentice/schemes.hpp"
#include "apprentice/synthetic.hpp"

namespace {

using namespace apprentice;

std::string env_data_dir() {
    const char* v = std::getenv("APPRENTICE_DATA_DIR");
    return v ? std::string(v) : std::string();
}

struct TrainArgs {
    std::string config_path;
    std::vector<std::string> overrides;
};

int cmd_train(const TrainArgs& args) {
    RunConfig cfg = parse_config_file(args.config_path);
    if (const auto env = env_data_dir(); !env.empty()) cfg.data.dir = env;
    for (const auto& kv : args.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError(cat("--set expects key=value, got '", kv, "'"));
        set_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    RunHooks hooks;
    hooks.log = &std::cerr;
    const SchemeOutput out = run_scheme(cfg, hooks);
    std::cout << "student checkpoint: " << out.student_checkpoint << "\n";
    if (!out.teacher_checkpoint.empty())
        std::cout << "teacher checkpoint: " << out.teacher_checkpoint << "\n";
    std::cout << "metrics: " << out.metrics_path << "\n";
    for (auto it = out.records.rbegin(); it != out.records.rend(); ++it)
        if (it->split == "eval") {
            std::cout << "final top1_error = " << it->top1_error << " %\n";
            break;
        }
    return 0;
}

struct EvalArgs {
    std::string checkpoint;
    std::string data_dir;
    std::string dataset = "mnist";
    std::string quant_spec;
    bool packed = false;
    int batch_size = 64;
};

int cmd_eval(const EvalArgs& args) {
    auto model = load_checkpoint(args.checkpoint);
    const Checkpoint ckpt = read_checkpoint(args.checkpoint);

    QuantSpec spec;
    if (!args.quant_spec.empty())
        spec = QuantSpec::parse(args.quant_spec);
    else if (const std::string* q = ckpt.find_meta("quant"))
        spec = QuantSpec::parse(*q);
    if (!spec.is_full_precision()) apply_policy(*model, spec);

    DataConfig data;
    data.dir = args.data_dir.empty() ? env_data_dir() : args.data_dir;
    if (data.dir.empty()) throw ConfigError("--data (or APPRENTICE_DATA_DIR) is required");
    data.dataset = args.dataset;
    const Dataset train = load_split(data, true);
    const Dataset test = load_split(data, false);
    const NormStats stats = compute_norm_stats(train);

    double top1;
    if (args.packed) {
        const QuantizedCheckpoint packed = export_quantized(*model);
        PackedExecutor exec(packed, spec);
        BatchIterator iter(test, stats, test.num_classes,
                           static_cast<std::size_t>(args.batch_size), 0, false, false);
        std::size_t correct = 0, seen = 0;
        while (auto batch = iter.next()) {
            const Tensor<float> logits = exec.logits(*batch->input);
            for (std::size_t i = 0; i < batch->labels.size(); ++i) {
                if (argmax_row(logits, i) == static_cast<std::size_t>(batch->labels[i]))
                    ++correct;
                ++seen;
            }
        }
        top1 = seen ? 100.0 * (1.0 - double(correct) / double(seen)) : 100.0;
    } else {
        top1 = evaluate_top1_error(*model, test, stats,
                                   static_cast<std::size_t>(args.batch_size));
    }
    std::cout << "top1_error = " << top1 << " %\n";
    return 0;
}

struct CacheArgs {
    std::string checkpoint;
    std::string data_dir;
    std::string dataset = "mnist";
    std::string out;
    int batch_size = 64;
    int subset_per_class = 0;
};

int cmd_cache(const CacheArgs& args) {
    DataConfig data;
    data.dir = args.data_dir.empty() ? env_data_dir() : args.data_dir;
    if (data.dir.empty()) throw ConfigError("--data (or APPRENTICE_DATA_DIR) is required");
    data.dataset = args.dataset;
    data.subset_per_class = args.subset_per_class;
    cache_teacher_logits(args.checkpoint, data, args.out, args.batch_size);
    std::cout << "logit cache: " << args.out << "\n";
    return 0;
}

struct ExportArgs {
    std::string checkpoint;
    std::string quant_spec;
    std::string out;
};

int cmd_export(const ExportArgs& args) {
    auto model = load_checkpoint(args.checkpoint);
    const Checkpoint ckpt = read_checkpoint(args.checkpoint);
    QuantSpec spec;
    if (!args.quant_spec.empty())
        spec = QuantSpec::parse(args.quant_spec);
    else if (const std::string* q = ckpt.find_meta("quant"))
        spec = QuantSpec::parse(*q);
    if (!spec.is_full_precision()) apply_policy(*model, spec);
    const QuantizedCheckpoint packed = export_quantized(*model);
    write_quantized(args.out, packed);
    std::size_t packed_layers = 0;
    for (const auto& r : packed.records)
        if (r.bits != 32) ++packed_layers;
    std::cout << "quantized checkpoint: " << args.out << " (" << packed_layers
              << " packed layers, " << packed.records.size() << " records)\n";
    return 0;
}

struct FootprintArgs {
    std::string model;
    int n = 3;
    std::vector<int> widths;
    int num_classes = 10;
    std::string quant_spec = "32A,32W";
    std::string batch_sizes = "1,8";
    bool exempt_first_last = false;
};

int cmd_footprint(const FootprintArgs& args) {
    LayerTable table;
    const auto named = available_layer_tables();
    if (std::find(named.begin(), named.end(), args.model) != named.end()) {
        table = named_layer_table(args.model);
    } else {
        ModelSpec spec;
        spec.family = args.model;
        spec.n = args.n;
        spec.widths = args.widths;
        spec.num_classes = args.num_classes;
        try {
            table = model_layer_table(spec);
        } catch (const ConfigError&) {
            std::string options;
            for (const auto& t : named) options += " " + t;
            throw ConfigError(cat("unknown network '", args.model, "'; named tables:", options,
                                  "; or a model family (cifar_resnet, mnist_mlp, mnist_convnet)"));
        }
    }
    const QuantSpec spec = QuantSpec::parse(args.quant_spec);
    std::vector<int> batches;
    for (const auto& part : [&] {
             std::vector<std::string> out;
             std::string cur;
             for (char c : args.batch_sizes) {
                 if (c == ',') {
                     out.push_back(cur);
                     cur.clear();
                 } else
                     cur += c;
             }
             out.push_back(cur);
             return out;
         }())
        if (!part.empty()) batches.push_back(std::stoi(part));
    if (batches.empty()) throw ConfigError("--batch-sizes yields no batch sizes");

    const auto bits = uniform_weight_bits(table, spec.weight_bits, args.exempt_first_last);
    const FootprintReport rep = footprint(table, bits, spec.act_bits, batches);
    std::cout << render_footprint_table(rep);
    return 0;
}

struct SparsityArgs {
    int weight_bits = 2;
    int index_bits = 16;
};

int cmd_sparsity(const SparsityArgs& args) {
    const SparsityEquivalence eq = sparse_equivalence(args.weight_bits, args.index_bits);
    std::cout << "raw sparsity          = " << eq.raw << "\n";
    std::cout << "index-adjusted (" << args.index_bits << "b) = " << eq.index_adjusted << "\n";
    return 0;
}

struct SynthArgs {
    std::string out;
    int train_count = 8000;
    int test_count = 2000;
    std::uint64_t seed = 7;
    double noise = 0.30;
};

int cmd_synth(const SynthArgs& args) {
    SyntheticConfig cfg;
    cfg.train_count = args.train_count;
    cfg.test_count = args.test_count;
    cfg.seed = args.seed;
    cfg.noise_sigma = args.noise;
    write_synthetic_mnist(args.out, cfg);
    std::cout << "wrote synthetic digit corpus to " << args.out << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"quantization-aware distillation toolkit"};
    app.require_subcommand(1);

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "run a training scheme from a config file");
    train->add_option("--config", train_args.config_path, "config file path")->required();
    train->add_option("--set", train_args.overrides, "key=value overrides, last wins");

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "top-1 error of a checkpoint on the eval split");
    eval->add_option("--checkpoint", eval_args.checkpoint)->required();
    eval->add_option("--data", eval_args.data_dir, "dataset directory");
    eval->add_option("--dataset", eval_args.dataset, "mnist or cifar10");
    eval->add_option("--quant-spec", eval_args.quant_spec, "e.g. 8A,2W (default: from metadata)");
    eval->add_flag("--packed", eval_args.packed, "route through the packed inference kernels");
    eval->add_option("--batch-size", eval_args.batch_size);

    CacheArgs cache_args;
    auto* cache = app.add_subcommand("cache-logits", "store teacher logits for the training split");
    cache->add_option("--checkpoint", cache_args.checkpoint)->required();
    cache->add_option("--data", cache_args.data_dir);
    cache->add_option("--dataset", cache_args.dataset);
    cache->add_option("--out", cache_args.out)->required();
    cache->add_option("--batch-size", cache_args.batch_size);
    cache->add_option("--subset-per-class", cache_args.subset_per_class,
                      "cache only the first K samples of each class");

    ExportArgs export_args;
    auto* exp = app.add_subcommand("export", "write a bit-packed quantized checkpoint");
    exp->add_option("--checkpoint", export_args.checkpoint)->required();
    exp->add_option("--quant-spec", export_args.quant_spec);
    exp->add_option("--out", export_args.out)->required();

    FootprintArgs fp_args;
    auto* fp = app.add_subcommand("footprint", "inference memory footprint table");
    fp->add_option("--model", fp_args.model, "named table or model family")->required();
    fp->add_option("--n", fp_args.n, "cifar_resnet block multiplier");
    fp->add_option("--widths", fp_args.widths, "mnist family widths")->delimiter(',');
    fp->add_option("--classes", fp_args.num_classes);
    fp->add_option("--quant-spec", fp_args.quant_spec);
    fp->add_option("--batch-sizes", fp_args.batch_sizes);
    fp->add_flag("--exempt-first-last", fp_args.exempt_first_last,
                 "keep first/last layers at full precision in the table");

    SparsityArgs sp_args;
    auto* sp = app.add_subcommand("sparsity-equiv",
                                  "sparsity a full-precision model needs to match a low-precision one");
    sp->add_option("--weight-bits", sp_args.weight_bits)->required();
    sp->add_option("--index-bits", sp_args.index_bits, "index bits per nonzero (default 16)");

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth-data", "write a synthetic digit corpus in idx format");
    synth->add_option("--out", synth_args.out)->required();
    synth->add_option("--train", synth_args.train_count);
    synth->add_option("--test", synth_args.test_count);
    synth->add_option("--seed", synth_args.seed);
    synth->add_option("--noise", synth_args.noise);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*train) return cmd_train(train_args);
        if (*eval) return cmd_eval(eval_args);
        if (*cache) return cmd_cache(cache_args);
        if (*exp) return cmd_export(export_args);
        if (*fp) return cmd_footprint(fp_args);
        if (*sp) return cmd_sparsity(sp_args);
        if (*synth) return cmd_synth(synth_args);
    } catch (const apprentice::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
