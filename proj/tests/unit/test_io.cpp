#include <doctest.h>

#include "apprentice/io_formats.hpp"
#include "support/testutil.hpp"

using namespace apprentice;
using testutil::TempDir;

TEST_CASE("checkpoint save/load/save is byte-identical") {
    TempDir dir("ckpt");
    ModelSpec spec;
    spec.family = "mnist_mlp";
    spec.widths = {16, 8, 10};
    auto model = build_model(spec, 33);
    save_checkpoint(dir.str("a.appr"), *model, {{"seed", "33"}, {"quant", "32A,32W"}});
    auto loaded = load_checkpoint(dir.str("a.appr"));
    save_checkpoint(dir.str("b.appr"), *loaded, {{"seed", "33"}, {"quant", "32A,32W"}});
    CHECK(testutil::slurp(dir.str("a.appr")) == testutil::slurp(dir.str("b.appr")));
}

TEST_CASE("checkpoint restores every parameter bitwise") {
    TempDir dir("ckptbits");
    auto model = build_cifar_resnet(1, 10, 99);
    // dirty the running stats so they round-trip too
    for (const auto& p : model->named_state())
        if (!p.trainable)
            for (auto& v : p.tensor->data) v += 0.125f;
    save_checkpoint(dir.str("m.appr"), *model, {});
    auto loaded = load_checkpoint(dir.str("m.appr"));
    const auto a = model->named_state();
    const auto b = loaded->named_state();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].name == b[i].name);
        CHECK(a[i].tensor->data == b[i].tensor->data);
    }
}

TEST_CASE("loading into a model of a different spec names the first mismatch") {
    TempDir dir("ckptmiss");
    ModelSpec spec;
    spec.family = "mnist_mlp";
    spec.widths = {16, 8, 10};
    auto model = build_model(spec, 1);
    save_checkpoint(dir.str("m.appr"), *model, {});
    ModelSpec other = spec;
    other.widths = {16, 12, 10};
    auto target = build_model(other, 1);
    const Checkpoint ckpt = read_checkpoint(dir.str("m.appr"));
    CHECK_THROWS_WITH_AS(load_into_model(ckpt, *target), doctest::Contains("fc1.weight"),
                         IoError);
}

TEST_CASE("fresh resnet-20 checkpoint holds 20 weight records plus normalization state") {
    TempDir dir("ckptcount");
    auto model = build_cifar_resnet(3, 10, 5);
    save_checkpoint(dir.str("r20.appr"), *model, {});
    const Checkpoint ckpt = read_checkpoint(dir.str("r20.appr"));
    std::size_t weight_records = 0, bn_records = 0;
    for (const auto& r : ckpt.params) {
        if (r.name.ends_with(".weight")) ++weight_records;
        if (r.name.find(".running_") != std::string::npos) ++bn_records;
    }
    CHECK(weight_records == 20);
    // 6n BN layers in blocks plus the final one, two running buffers each
    CHECK(bn_records == (6 * 3 + 1) * 2);
}

TEST_CASE("truncated checkpoint is rejected") {
    TempDir dir("ckpttrunc");
    ModelSpec spec;
    spec.family = "mnist_mlp";
    spec.widths = {4, 3};
    auto model = build_model(spec, 1);
    save_checkpoint(dir.str("m.appr"), *model, {});
    auto bytes = testutil::slurp(dir.str("m.appr"));
    bytes.resize(bytes.size() - 7);
    wire::write_file(dir.str("cut.appr"), bytes);
    CHECK_THROWS_WITH_AS(read_checkpoint(dir.str("cut.appr")), doctest::Contains("truncated"),
                         IoError);
}

TEST_CASE("checkpoint with a wrong version or magic is rejected") {
    TempDir dir("ckptver");
    std::vector<std::uint8_t> bad = {'A', 'P', 'P', 'R'};
    wire::put_u32(bad, 99);
    wire::write_file(dir.str("v99.appr"), bad);
    CHECK_THROWS_WITH_AS(read_checkpoint(dir.str("v99.appr")), doctest::Contains("version 99"),
                         IoError);
    std::vector<std::uint8_t> nomagic = {'N', 'O', 'P', 'E'};
    wire::put_u32(nomagic, 1);
    wire::write_file(dir.str("no.appr"), nomagic);
    CHECK_THROWS_WITH_AS(read_checkpoint(dir.str("no.appr")), doctest::Contains("magic"), IoError);
}

TEST_CASE("logit cache round-trips bitwise") {
    TempDir dir("cache");
    Rng rng(71);
    LogitCache cache;
    cache.num_classes = 10;
    for (int i = 0; i < 100; ++i) {
        std::vector<float> row(10);
        for (auto& v : row) v = float(rng.uniform(-4.0, 4.0));
        cache.records.push_back({i * 3, std::move(row)});
    }
    write_logit_cache(dir.str("t.aplc"), cache);
    const LogitCache back = read_logit_cache(dir.str("t.aplc"));
    CHECK(back.num_classes == 10);
    REQUIRE(back.records.size() == 100);
    for (std::size_t i = 0; i < 100; ++i) {
        CHECK(back.records[i].first == cache.records[i].first);
        CHECK(back.records[i].second == cache.records[i].second);
    }
    CHECK(back.find(3) != nullptr);
    CHECK(back.find(4) == nullptr);
}

TEST_CASE("logit cache rejects id collisions and unsorted ids") {
    LogitCache cache;
    cache.num_classes = 2;
    cache.records.push_back({5, {1.0f, 2.0f}});
    cache.records.push_back({5, {3.0f, 4.0f}});
    TempDir dir("cachedup");
    CHECK_THROWS_WITH_AS(write_logit_cache(dir.str("bad.aplc"), cache),
                         doctest::Contains("strictly increasing"), IoError);
}

TEST_CASE("config parsing fills the documented distillation defaults") {
    const RunConfig cfg = parse_config("scheme = A\n"
                                       "teacher.family = mnist_mlp\n"
                                       "teacher.widths = 784,32,10\n"
                                       "student.family = mnist_mlp\n"
                                       "student.widths = 784,16,10\n"
                                       "data.dir = /tmp/x\n");
    CHECK(cfg.distill.alpha == 1.0);
    CHECK(cfg.distill.beta == 0.5);
    CHECK(cfg.distill.gamma == 0.5);
    CHECK(cfg.distill.tau == 1.0);
    CHECK(cfg.student_quant.is_full_precision());
}

TEST_CASE("config parses quant specs and rejects bad ones with line numbers") {
    const RunConfig cfg = parse_config("student.quant = 8A,4W\n");
    CHECK(cfg.student_quant.act_bits == 8);
    CHECK(cfg.student_quant.weight_bits == 4);
    CHECK_THROWS_AS(parse_config("student.quant = 9A,3W\n"), ConfigError);
    const std::string msg = testutil::catch_message<ConfigError>(
        [] { parse_config("# comment\nnot_a_key = 1\n"); });
    CHECK(msg.find("line 2") != std::string::npos);
    CHECK(msg.find("not_a_key") != std::string::npos);
    CHECK_THROWS_WITH_AS(parse_config("epochs = ten\n"), doctest::Contains("line 1"),
                         ConfigError);
}

TEST_CASE("config parses schedules, comments and whitespace") {
    const RunConfig cfg = parse_config("  lr_schedule = 1e-3:12,1e-4:8,1e-5:5   # staged\n"
                                       "momentum=0.9\n"
                                       "\n"
                                       "data.augment = true\n");
    REQUIRE(cfg.lr_schedule.size() == 3);
    CHECK(cfg.lr_schedule[0].lr == 1e-3);
    CHECK(cfg.lr_schedule[0].epochs == 12);
    CHECK(cfg.lr_schedule[2].epochs == 5);
    CHECK(cfg.data.augment);
    CHECK(cfg.total_epochs() == 25);
}

TEST_CASE("render_config output reparses to the same values") {
    RunConfig cfg;
    cfg.scheme = Scheme::B;
    cfg.seed = 77;
    cfg.student.family = "mnist_convnet";
    cfg.student.widths = {8, 16, 64};
    cfg.student_quant = QuantSpec::parse("8A,2W");
    cfg.teacher_checkpoint = "/tmp/t.appr";
    cfg.distill.gamma = 0.25;
    cfg.data.dir = "/tmp/data";
    const RunConfig back = parse_config(render_config(cfg));
    CHECK(back.scheme == Scheme::B);
    CHECK(back.seed == 77);
    CHECK(back.student.widths == cfg.student.widths);
    CHECK(back.student_quant.str() == "8A,2W");
    CHECK(back.distill.gamma == 0.25);
    CHECK(back.teacher_checkpoint == cfg.teacher_checkpoint);
}

TEST_CASE("scheme C default schedule renders as the documented stages") {
    RunConfig cfg;
    cfg.scheme = Scheme::C;
    const auto sched = cfg.resolved_schedule();
    REQUIRE(sched.size() == 3);
    CHECK(sched[0].lr == 1e-3);
    CHECK(sched[0].epochs == 12);
    CHECK(sched[1].lr == 1e-4);
    CHECK(sched[1].epochs == 8);
    CHECK(sched[2].lr == 1e-5);
    CHECK(sched[2].epochs == 5);
}

TEST_CASE("metrics lines round-trip and keep precision") {
    std::vector<EpochRecord> records;
    Rng rng(91);
    for (int e = 1; e <= 50; ++e) {
        EpochRecord r;
        r.epoch = e;
        r.split = e % 2 ? "train" : "eval";
        r.top1_error = rng.uniform(0.0, 100.0);
        r.loss_total = rng.uniform(0.0, 3.0);
        if (e % 2) r.loss_teacher_ce = rng.uniform(0.0, 3.0);
        r.loss_student_ce = rng.uniform(0.0, 3.0);
        r.seconds = rng.uniform(0.0, 10.0);
        records.push_back(r);
    }
    TempDir dir("metrics");
    write_metrics(dir.str("m.ndjson"), records);
    const auto back = read_metrics(dir.str("m.ndjson"));
    REQUIRE(back.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) CHECK(back[i] == records[i]);
}

TEST_CASE("top1_error serializes with at least four significant digits") {
    EpochRecord r;
    r.epoch = 1;
    r.split = "eval";
    r.top1_error = 12.345678;
    const std::string line = metrics_line(r);
    CHECK(line.find("12.345678") != std::string::npos);
    CHECK(parse_metrics_line(line).top1_error == r.top1_error);
}

TEST_CASE("teacher loss field stays null for records that never had it") {
    EpochRecord r;
    r.epoch = 3;
    r.split = "train";
    r.loss_total = 1.5;
    r.loss_student_ce = 1.0;
    r.loss_distill = 0.5;
    const std::string line = metrics_line(r);
    CHECK(line.find("\"loss_teacher_ce\":null") != std::string::npos);
    const EpochRecord back = parse_metrics_line(line);
    CHECK(!back.loss_teacher_ce.has_value());
    CHECK(back.loss_distill == r.loss_distill);
}
