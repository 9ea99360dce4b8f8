// seqpatch: synth | train | infer | eval | sweep | serve
//
// Every verb takes an optional --config file.json; any further --key value pairs override
// keys of that file (dotted keys reach nested objects, e.g. --extraction.stride 6).
// Exit codes: 0 ok, 1 usage error, 2 data error, 3 numeric failure.

#include "CLI11.hpp"

#include <filesystem>
#include <iostream>

#include "seqpatch/cli_config.hpp"
#include "seqpatch/sequence_export.hpp"
#include "seqpatch/service.hpp"
#include "seqpatch/sweep.hpp"
#include "seqpatch/synth.hpp"
#include "seqpatch/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace seqpatch;

namespace {

const std::vector<std::string> kExtractionKeys = {"num_rays", "stride", "patch_size", "seq_len"};

ExtractionConfig geometry_from(const json& cfg)
{
    return cfg.contains("extraction") ? extraction_from_json(cfg.at("extraction")) : ExtractionConfig{};
}

Mask mask_slice_of(const SegvData& m, std::size_t k)
{
    if (k >= m.dims[0])
        throw std::out_of_range("slice " + std::to_string(k) + " out of range");
    const std::size_t n = std::size_t{m.dims[1]} * m.dims[2];
    return Mask(Shape{m.dims[1], m.dims[2]},
                std::vector<std::uint8_t>(m.u8.begin() + static_cast<std::ptrdiff_t>(k * n),
                                          m.u8.begin() + static_cast<std::ptrdiff_t>((k + 1) * n)));
}

int run_synth(const json& cfg)
{
    check_keys(cfg, {"out", "train_slices", "test_slices", "test_seed", "image_size", "kind", "radius_min",
                     "radius_max", "blur_sigma", "contrast", "background", "noise_sigma", "distractors", "seed",
                     "centered"});
    const fs::path out = require<std::string>(cfg, "out");
    json spec_json = cfg;
    for (const char* k : {"out", "train_slices", "test_slices", "test_seed"})
        spec_json.erase(k);
    const SynthSpec spec = synth_spec_from_json(spec_json);
    SynthSpec test_spec = spec;
    test_spec.seed = cfg.value("test_seed", spec.seed + 1);
    fs::create_directories(out);
    Manifest m;
    for (const auto& [name, s, n] : {std::tuple{std::string("train"), spec, cfg.value("train_slices", 200)},
                                     std::tuple{std::string("test"), test_spec, cfg.value("test_slices", 50)}}) {
        if (n <= 0)
            continue;
        const Volume v = generate_synthetic(s, static_cast<std::size_t>(n));
        const std::string vol = (out / (name + ".segv")).string(), mask = (out / (name + "_mask.segv")).string();
        save_intensities(v, vol);
        save_mask(v, mask);
        m.entries.push_back({name, vol, mask, name, {}});
    }
    write_file((out / "manifest.json").string(), to_json(m, out).dump(2));
    std::cout << json{{"manifest", (out / "manifest.json").string()}, {"volumes", m.entries.size()}}.dump() << '\n';
    return 0;
}

int run_train(const json& cfg)
{
    check_keys(cfg, {"manifest", "variant", "base_channels", "epochs", "sequences_per_batch", "learning_rate",
                     "weight_decay", "seed", "extraction", "checkpoint_dir", "cpu_budget_seconds",
                     "max_validation_slices", "max_steps"});
    const Manifest manifest = load_manifest(require<std::string>(cfg, "manifest"));
    json tc = cfg;
    tc.erase("manifest");
    const TrainConfig config = train_config_from_json(tc);
    TrainHooks hooks;
    hooks.on_epoch = [](const EpochLog& e) { std::cout << to_json(e).dump() << std::endl; };
    const TrainResult r = train(config, manifest, hooks);
    std::cout << json{{"best_val_dsc", r.best_dsc}, {"epochs_run", r.epochs.size()},
                      {"budget_exhausted", r.budget_exhausted}, {"checkpoint_dir", config.checkpoint_dir}}
                     .dump()
              << '\n';
    return 0;
}

int run_infer(const json& cfg)
{
    check_keys(cfg, {"checkpoint", "volume", "mask", "slice", "x", "y", "out_mask", "out_prob", "export_sequences",
                     "extraction"});
    const auto mask_path = cfg.contains("mask") ? std::optional(require<std::string>(cfg, "mask")) : std::nullopt;
    const Volume v = load_volume(require<std::string>(cfg, "volume"), mask_path);
    const auto k = require<std::size_t>(cfg, "slice");
    const Point click{require<int>(cfg, "x"), require<int>(cfg, "y")};
    const ExtractionConfig geom = geometry_from(cfg);
    const SegmentResult r = infer(require<std::string>(cfg, "checkpoint"), v, k, click, geom);
    json out{{"slice", k}, {"click", {click.x, click.y}}, {"foreground_pixels", count_foreground({r.mask.values().begin(), r.mask.values().end()})}};
    if (v.mask)
        out["dsc"] = dsc(r.mask, v.mask_slice(k));
    if (cfg.contains("out_mask")) {
        const std::array<std::uint32_t, 3> dims{1, v.dims[1], v.dims[2]};
        write_file(require<std::string>(cfg, "out_mask"), encode_segv1(dims, v.spacing, r.mask.values()));
    }
    if (cfg.contains("out_prob")) {
        const Image prob = r.likelihood.fused_map();
        write_file(require<std::string>(cfg, "out_prob"), encode_unit_png(prob.data(), v.width(), v.height()));
    }
    if (cfg.contains("export_sequences")) {
        ExtractionConfig e = geom;
        e.center = click;
        const Mask* m = nullptr;
        Mask gt;
        if (v.mask) {
            gt = v.mask_slice(k);
            m = &gt;
        }
        export_sequences(require<std::string>(cfg, "export_sequences"),
                         extract_sequences(normalize_intensity(v.slice(k)), m, e), e);
    }
    std::cout << out.dump() << '\n';
    return 0;
}

json summarize(const std::vector<MetricReport>& reports)
{
    double d = 0, hd = 0, abd = 0, rvd = 0, cx = 0, cy = 0;
    std::size_t nd = 0, nr = 0;
    for (const auto& r : reports) {
        if (r.hd95) {
            hd += *r.hd95;
            abd += *r.abd;
            cx += (*r.cd)[0];
            cy += (*r.cd)[1];
            ++nd;
        }
        if (r.arvd) {
            rvd += *r.arvd;
            ++nr;
        }
        d += r.dsc;
    }
    auto mean = [](double s, std::size_t n) { return n ? json(s / static_cast<double>(n)) : json(nullptr); };
    return {{"slices", reports.size()}, {"mean_dsc", mean(d, reports.size())}, {"mean_hd95", mean(hd, nd)},
            {"mean_abd", mean(abd, nd)}, {"mean_arvd", mean(rvd, nr)}, {"mean_cd_x", mean(cx, nd)},
            {"mean_cd_y", mean(cy, nd)}};
}

int run_eval(const json& cfg)
{
    check_keys(cfg, {"prediction", "truth", "checkpoint", "manifest", "split", "extraction", "per_slice"});
    if (cfg.contains("prediction")) {
        const SegvData p = load_mask_file(require<std::string>(cfg, "prediction"));
        const SegvData t = load_mask_file(require<std::string>(cfg, "truth"));
        if (p.dims != t.dims)
            throw DataError("prediction and truth dims differ");
        const MaskPair pair({t.dims[0], t.dims[1], t.dims[2]}, {t.spacing[0], t.spacing[1], t.spacing[2]}, p.u8, t.u8);
        std::cout << to_json(evaluate(pair)).dump(2) << '\n';
        return 0;
    }
    const Manifest manifest = load_manifest(require<std::string>(cfg, "manifest"));
    const auto params = load_checkpoint(require<std::string>(cfg, "checkpoint"));
    const ExtractionConfig geom = geometry_from(cfg);
    std::vector<MetricReport> reports;
    json per_slice = json::array();
    for (const LabelledSlice& s : labelled_slices(manifest, cfg.value("split", std::string("test")))) {
        const SegmentResult r = segment_slice(params, s.image, s.center, geom);
        reports.push_back(evaluate(MaskPair(r.mask, s.mask)));
        per_slice.push_back({{"volume", s.volume_id}, {"slice", s.slice_index}, {"report", to_json(reports.back())}});
    }
    json out = summarize(reports);
    if (cfg.value("per_slice", false))
        out["per_slice"] = per_slice;
    std::cout << out.dump(2) << '\n';
    return 0;
}

int run_sweep(const json& cfg)
{
    check_keys(cfg, {"checkpoint", "volume", "mask", "slice", "x", "y", "radius", "step", "csv", "heatmap",
                     "threads", "extraction"});
    const Volume v = load_volume(require<std::string>(cfg, "volume"), require<std::string>(cfg, "mask"));
    const auto k = require<std::size_t>(cfg, "slice");
    const Mask truth = v.mask_slice(k);
    const Point base = cfg.contains("x") ? Point{require<int>(cfg, "x"), require<int>(cfg, "y")} : training_center(truth);
    const auto params = load_checkpoint(require<std::string>(cfg, "checkpoint"));
    const ExtractionConfig geom = geometry_from(cfg);
    const Image img = v.slice(k);
    const auto axis = offset_axis(cfg.value("radius", 20), cfg.value("step", 10));
    const SweepResult res = click_sweep(
        truth, base, axis, axis, [&](Point p) { return segment_slice(params, img, p, geom).mask; },
        cfg.value("threads", 1u));
    if (cfg.contains("csv"))
        write_file(require<std::string>(cfg, "csv"), res.csv());
    else
        std::cout << res.csv();
    if (cfg.contains("heatmap"))
        write_file(require<std::string>(cfg, "heatmap"), res.heatmap_png());
    return 0;
}

int run_serve(const json& cfg)
{
    check_keys(cfg, {"checkpoint", "manifest", "host", "port", "extraction"});
    const SegmentService service(load_checkpoint(require<std::string>(cfg, "checkpoint")),
                                 load_manifest(require<std::string>(cfg, "manifest")), geometry_from(cfg));
    httplib::Server server;
    service.attach(server);
    const auto host = cfg.value("host", std::string("127.0.0.1"));
    const int port = cfg.value("port", 8080);
    std::cerr << "listening on " << host << ":" << port << std::endl;
    if (!server.listen(host, port))
        throw DataError("cannot bind " + host + ":" + std::to_string(port));
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Point-click segmentation with sequential patch ConvRNNs"};
    app.require_subcommand(1);
    std::string config_path;
    const std::vector<std::pair<const char*, int (*)(const json&)>> verbs = {
        {"synth", run_synth}, {"train", run_train}, {"infer", run_infer},
        {"eval", run_eval},   {"sweep", run_sweep}, {"serve", run_serve}};
    std::vector<CLI::App*> subs;
    for (const auto& [name, fn] : verbs) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "JSON config file");
        sub->allow_extras();
        subs.push_back(sub);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    try {
        for (std::size_t i = 0; i < subs.size(); ++i)
            if (subs[i]->parsed())
                return verbs[i].second(load_config(config_path, subs[i]->remaining()));
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const std::out_of_range& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
