#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "mcld/metrics.hpp"
#include "mcld/selfcheck.hpp"

namespace fs = std::filesystem;
using namespace mcld;

namespace {

// exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure
constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kDataError = 2;
constexpr int kNumeric = 3;

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> sets;  // key=value overrides
    std::string out_dir;
};

std::vector<std::pair<std::string, std::string>> parse_sets(const std::vector<std::string>& sets) {
    std::vector<std::pair<std::string, std::string>> kv;
    for (const auto& s : sets) {
        auto eq = s.find('=');
        check(eq != std::string::npos, "--set expects key=value, got: " + s);
        kv.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    return kv;
}

uint64_t file_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    check(static_cast<bool>(f), "cannot hash missing file: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return fnv1a64(buf.data(), buf.size());
}

std::string hex64(uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

struct ManifestWriter {
    std::string command;
    nlohmann::json config = nlohmann::json::object();
    nlohmann::json extra = nlohmann::json::object();
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    void write(const std::string& out_dir) {
        nlohmann::json j;
        j["command"] = command;
        j["config"] = config;
        j["inputs"] = inputs;
        nlohmann::json outs = nlohmann::json::array();
        for (const auto& p : outputs)
            outs.push_back({{"path", p}, {"fnv1a64", hex64(file_hash(p))}});
        j["outputs"] = outs;
        j["extra"] = extra;
        j["wall_time_s"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        fs::create_directories(out_dir);
        std::ofstream f(out_dir + "/run_manifest.json");
        check(static_cast<bool>(f), "cannot write run manifest in " + out_dir);
        f << j.dump(2) << "\n";
    }
};

int resolve_jobs(int jobs) {
    if (const char* cap = std::getenv("MCLD_THREADS")) {
        const int c = std::atoi(cap);
        if (c >= 1) jobs = std::min(jobs, c);
    }
    return std::max(1, jobs);
}

void parallel_for(int64_t n, int jobs, const std::function<void(int64_t)>& fn) {
    jobs = static_cast<int>(std::min<int64_t>(jobs, std::max<int64_t>(1, n)));
    if (jobs <= 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int64_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < jobs; ++w)
        pool.emplace_back([&]() {
            while (true) {
                const int64_t i = next.fetch_add(1);
                if (i >= n) return;
                fn(i);
            }
        });
    for (auto& th : pool) th.join();
}

// Loads "<stem>.ppm" + "<stem>.dpmap"; face box recovered from the head raster.
Sample load_sample_stem(const std::string& stem) {
    Sample s;
    s.image = read_ppm(stem + ".ppm");
    s.dpmap = read_dpmap(stem + ".dpmap");
    check(s.image.dim(0) == s.dpmap.height() && s.image.dim(1) == s.dpmap.width(),
          "sample files disagree on dimensions: " + stem);
    int64_t x0 = s.dpmap.width(), y0 = s.dpmap.height(), x1 = 0, y1 = 0;
    for (int64_t y = 0; y < s.dpmap.height(); ++y)
        for (int64_t x = 0; x < s.dpmap.width(); ++x)
            if (s.dpmap.part_at(y, x) == kHeadPart) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x + 1);
                y1 = std::max(y1, y + 1);
            }
    if (x1 > x0) s.face_box = {x0, y0, x1, y1};
    s.spec.canvas_h = static_cast<int>(s.image.dim(0));
    s.spec.canvas_w = static_cast<int>(s.image.dim(1));
    return s;
}

Models<float> load_models_checked(const std::string& path, const std::string& needed_stage,
                                  const std::string& hint) {
    check(fs::exists(path), "checkpoint not found: " + path);
    Models<float> m = load_checkpoint(path);
    if (!needed_stage.empty())
        check(m.stages.count(needed_stage),
              "checkpoint " + path + " lacks the '" + needed_stage + "' stage; " + hint);
    return m;
}

int parse_part_list(const std::string& text, std::set<int>& out) {
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        bool named = false;
        for (size_t i = 0; i < part_names().size(); ++i)
            if (tok == part_names()[i]) {
                out.insert(static_cast<int>(i) + 1);
                named = true;
            }
        if (!named) {
            try {
                out.insert(std::stoi(tok));
            } catch (...) {
                throw std::runtime_error("unknown part name or id: " + tok);
            }
        }
    }
    return 0;
}

// per-part pixel regions of a pose map
Tensor<float> parts_region_mask(const DensePoseMap& dp, const std::set<int>& parts) {
    Tensor<float> m({dp.height(), dp.width()});
    for (int64_t y = 0; y < dp.height(); ++y)
        for (int64_t x = 0; x < dp.width(); ++x)
            if (parts.count(dp.part_at(y, x))) m.at(y, x) = 1.0f;
    return m;
}

// inside:outside mean-absolute-change ratio between two generations
nlohmann::json locality_stats(const Tensor<float>& base, const Tensor<float>& edited,
                              const Tensor<float>& region) {
    double in_acc = 0, out_acc = 0;
    int64_t in_n = 0, out_n = 0;
    for (int64_t y = 0; y < base.dim(0); ++y)
        for (int64_t x = 0; x < base.dim(1); ++x) {
            double d = 0;
            for (int c = 0; c < 3; ++c)
                d += std::abs(static_cast<double>(base.at(y, x, c)) - edited.at(y, x, c));
            if (region.at(y, x) > 0) {
                in_acc += d;
                in_n += 3;
            } else {
                out_acc += d;
                out_n += 3;
            }
        }
    const double inside = in_n ? in_acc / in_n : 0.0;
    const double outside = out_n ? out_acc / out_n : 0.0;
    return nlohmann::json{{"inside_mean_change", inside},
                          {"outside_mean_change", outside},
                          {"ratio", outside > 0 ? inside / outside : 0.0}};
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const CommonOpts& co, int64_t n, int jobs) {
    RunConfig cfg = load_config(co.config_path, parse_sets(co.sets));
    ManifestWriter mw;
    mw.command = "gen-data";
    mw.config = config_to_map(cfg);
    DatasetConfig dc = dataset_config_from(cfg, cfg.seed);
    jobs = resolve_jobs(jobs);
    Manifest m;
    if (jobs <= 1 || n <= 1) {
        m = make_dataset(dc, n, co.out_dir);
    } else {
        // samples are independent per index: render in parallel, then write
        fs::create_directories(co.out_dir);
        m.base_seed = dc.base_seed;
        m.count = n;
        m.canvas = dc.canvas;
        m.parts = dc.parts;
        m.tile = dc.tile;
        m.entries.resize(static_cast<size_t>(n));
        std::vector<PairSample> rendered(static_cast<size_t>(n));
        PairOptions po{dc.canvas, dc.parts, dc.tile};
        parallel_for(n, jobs, [&](int64_t i) {
            auto [src, tgt] = sample_pair(dc.base_seed + static_cast<uint64_t>(i), po);
            rendered[static_cast<size_t>(i)] = PairSample{std::move(src), std::move(tgt)};
        });
        for (int64_t i = 0; i < n; ++i) {
            char stem[32];
            std::snprintf(stem, sizeof(stem), "%06lld", static_cast<long long>(i));
            ManifestEntry e;
            e.id = i;
            e.source_files = {std::string(stem) + "_source.ppm",
                              std::string(stem) + "_source.dpmap"};
            e.target_files = {std::string(stem) + "_target.ppm",
                              std::string(stem) + "_target.dpmap"};
            const auto& p = rendered[static_cast<size_t>(i)];
            write_ppm(co.out_dir + "/" + e.source_files.image, p.source.image);
            write_dpmap(co.out_dir + "/" + e.source_files.dpmap, p.source.dpmap);
            write_ppm(co.out_dir + "/" + e.target_files.image, p.target.image);
            write_dpmap(co.out_dir + "/" + e.target_files.dpmap, p.target.dpmap);
            e.source_spec = p.source.spec;
            e.target_spec = p.target.spec;
            e.source_face_box = p.source.face_box;
            e.target_face_box = p.target.face_box;
            m.entries[static_cast<size_t>(i)] = std::move(e);
        }
        std::ofstream f(co.out_dir + "/manifest.json");
        check(static_cast<bool>(f), "cannot write manifest in " + co.out_dir);
        f << manifest_to_json(m).dump(2) << "\n";
    }
    mw.outputs.push_back(co.out_dir + "/manifest.json");
    for (const auto& e : m.entries) {
        mw.outputs.push_back(co.out_dir + "/" + e.source_files.image);
        mw.outputs.push_back(co.out_dir + "/" + e.target_files.image);
    }
    mw.extra["count"] = m.count;
    mw.write(co.out_dir);
    std::cout << "wrote " << m.count << " pairs to " << co.out_dir << "\n";
    return kOk;
}

void write_metrics_jsonl(const std::string& path, const TrainLog& log) {
    std::ofstream f(path);
    check(static_cast<bool>(f), "cannot write metrics log: " + path);
    for (const auto& s : log.steps) {
        nlohmann::json j{{"step", s.step},
                         {"loss_mse", s.loss_mse},
                         {"loss_face", s.loss_face},
                         {"loss_overall", s.loss_overall}};
        f << j.dump() << "\n";
    }
}

int cmd_train(const CommonOpts& co, const std::string& data_dir, const std::string& stage,
              const std::string& ablation_str, const std::string& autoenc_ckpt,
              const std::string& face_ckpt) {
    RunConfig cfg = load_config(co.config_path, parse_sets(co.sets));
    const Ablation ablation = ablation_from_string(ablation_str);
    ManifestWriter mw;
    mw.command = "train";
    mw.config = config_to_map(cfg);
    mw.extra["stage"] = stage;
    mw.extra["ablation"] = ablation_to_string(ablation);
    mw.inputs.push_back(data_dir);
    check(fs::exists(data_dir + "/manifest.json"), "dataset not found at " + data_dir);
    Dataset ds = load_dataset(data_dir);
    fs::create_directories(co.out_dir);
    const std::string ckpt_path = co.out_dir + "/checkpoint.mcld";

    if (stage == "autoenc") {
        Models<float> models = init_models<float>(cfg, ablation);
        std::vector<Tensor<float>> images;
        for (const auto& p : ds.pairs) {
            images.push_back(p.source.image);
            images.push_back(p.target.image);
        }
        AutoencTrainConfig ac;
        ac.lr = cfg.lr;
        ac.steps = cfg.steps;
        ac.batch = models.dims.batch;
        ac.seed = cfg.seed;
        ac.f = cfg.f;
        ac.latent_channels = cfg.latent_channels;
        ac.width = models.dims.autoenc_width;
        auto res = train_autoencoder(images, ac);
        models.autoenc = res.params;
        models.stages.insert("autoenc");
        save_checkpoint(ckpt_path, models);
        std::ofstream f(co.out_dir + "/metrics.jsonl");
        for (size_t i = 0; i < res.loss_curve.size(); ++i)
            f << nlohmann::json{{"step", i}, {"loss_mse", res.loss_curve[i]}}.dump() << "\n";
        mw.outputs.push_back(ckpt_path);
        mw.outputs.push_back(co.out_dir + "/metrics.jsonl");
        mw.write(co.out_dir);
        std::cout << "autoencoder stage done; final loss "
                  << (res.loss_curve.empty() ? 0.0 : res.loss_curve.back()) << "\n";
        return kOk;
    }
    if (stage == "face") {
        Models<float> models = init_models<float>(cfg, ablation);
        if (!autoenc_ckpt.empty()) {
            auto prev = load_models_checked(autoenc_ckpt, "autoenc", "run --stage autoenc first");
            models.autoenc = prev.autoenc;
            models.stages.insert("autoenc");
        }
        FaceTrainConfig fc;
        fc.lr = cfg.lr;
        fc.steps = cfg.steps;
        fc.batch = models.dims.batch * 2;
        fc.seed = cfg.seed;
        fc.width = models.dims.face_width;
        fc.embed_dim = cfg.embed_dim;
        fc.face_size = models.dims.face_size;
        auto res = train_face_encoder(ds, fc);
        models.face = res.params;
        models.stages.insert("face");
        save_checkpoint(ckpt_path, models);
        std::ofstream f(co.out_dir + "/metrics.jsonl");
        for (size_t i = 0; i < res.loss_curve.size(); ++i)
            f << nlohmann::json{{"step", i}, {"loss_ce", res.loss_curve[i]}}.dump() << "\n";
        mw.outputs.push_back(ckpt_path);
        mw.outputs.push_back(co.out_dir + "/metrics.jsonl");
        mw.write(co.out_dir);
        std::cout << "face-encoder stage done\n";
        return kOk;
    }
    if (stage == "diffusion") {
        check(!autoenc_ckpt.empty(),
              "--stage diffusion requires --autoenc-ckpt (train --stage autoenc first)");
        check(!face_ckpt.empty(),
              "--stage diffusion requires --face-ckpt (train --stage face first)");
        auto ae = load_models_checked(autoenc_ckpt, "autoenc", "run --stage autoenc first");
        auto fe = load_models_checked(face_ckpt, "face", "run --stage face first");
        Models<float> models = init_models<float>(cfg, ablation);
        check(ae.cfg.canvas == cfg.canvas && ae.cfg.f == cfg.f &&
                  ae.cfg.latent_channels == cfg.latent_channels,
              "autoencoder checkpoint geometry does not match the config");
        check(fe.cfg.embed_dim == cfg.embed_dim, "face checkpoint embed_dim mismatch");
        models.autoenc = ae.autoenc;
        models.face = fe.face;
        models.stages.insert("autoenc");
        models.stages.insert("face");
        TrainConfig tc = train_config_from(cfg, models.dims);
        auto log = train_diffusion(models, ds, tc);
        save_checkpoint(ckpt_path, models);
        write_metrics_jsonl(co.out_dir + "/metrics.jsonl", log);
        mw.outputs.push_back(ckpt_path);
        mw.outputs.push_back(co.out_dir + "/metrics.jsonl");
        mw.extra["uncond_samples"] = log.uncond_samples;
        mw.extra["total_samples"] = log.total_samples;
        if (log.diverged_at) {
            mw.extra["diverged_at"] = *log.diverged_at;
            mw.write(co.out_dir);
            std::cerr << "training diverged (non-finite loss) at step " << *log.diverged_at
                      << "; last good checkpoint written to " << ckpt_path << "\n";
            return kNumeric;
        }
        mw.write(co.out_dir);
        std::cout << "diffusion stage done; final loss "
                  << (log.steps.empty() ? 0.0 : log.steps.back().loss_overall) << "\n";
        return kOk;
    }
    throw std::runtime_error("unknown --stage: " + stage + " (autoenc|face|diffusion)");
}

int cmd_sample(const std::string& ckpt, const std::string& source_stem,
               const std::string& pose_path, double cfg_scale, int steps, double eta,
               uint64_t seed, const std::string& out_dir) {
    auto models = load_models_checked(ckpt, "diffusion", "train --stage diffusion first");
    ManifestWriter mw;
    mw.command = "sample";
    mw.config = config_to_map(models.cfg);
    mw.inputs = {ckpt, source_stem + ".ppm", source_stem + ".dpmap", pose_path};
    Sample source = load_sample_stem(source_stem);
    DensePoseMap pose = read_dpmap(pose_path);
    check(source.face_box[2] > source.face_box[0],
          "source has no visible head; cannot build the face condition");
    SampleOptions opt;
    opt.steps = steps;
    opt.cfg_scale = cfg_scale;
    opt.eta = eta;
    opt.seed = seed;
    auto cond = build_conditions(models, source);
    auto img = ddim_sample(models, cond, pose, opt);
    fs::create_directories(out_dir);
    const std::string out_path = out_dir + "/sample.ppm";
    write_ppm(out_path, img);
    mw.outputs.push_back(out_path);
    mw.extra["seed"] = seed;
    mw.extra["cfg_scale"] = cfg_scale;
    mw.extra["steps"] = steps;
    mw.write(out_dir);
    std::cout << "wrote " << out_path << "\n";
    return kOk;
}

int cmd_edit(const std::string& ckpt, const std::string& source_stem,
             const std::string& donor_stem, const std::string& swap_parts_str, bool swap_face,
             const std::string& pose_path, double cfg_scale, int steps, uint64_t seed,
             const std::string& out_dir) {
    auto models = load_models_checked(ckpt, "diffusion", "train --stage diffusion first");
    ManifestWriter mw;
    mw.command = "edit";
    mw.config = config_to_map(models.cfg);
    mw.inputs = {ckpt, source_stem + ".ppm", pose_path};
    Sample source = load_sample_stem(source_stem);
    DensePoseMap pose = read_dpmap(pose_path);
    Sample donor;
    Edits edits;
    std::set<int> swap_parts;
    parse_part_list(swap_parts_str, swap_parts);
    if (!donor_stem.empty()) {
        donor = load_sample_stem(donor_stem);
        mw.inputs.push_back(donor_stem + ".ppm");
        if (!swap_parts.empty()) {
            edits.atlas_donor = &donor;
            edits.swap_parts = swap_parts;
        }
        if (swap_face) edits.face_donor = &donor;
    } else {
        check(swap_parts.empty() && !swap_face, "--swap-parts/--swap-face require --donor");
    }
    SampleOptions opt;
    opt.steps = steps;
    opt.cfg_scale = cfg_scale;
    opt.seed = seed;
    auto edited = edit_sample(models, source, edits, pose, opt);
    auto baseline = ddim_sample(models, build_conditions(models, source), pose, opt);
    fs::create_directories(out_dir);
    write_ppm(out_dir + "/edited.ppm", edited);
    write_ppm(out_dir + "/unedited.ppm", baseline);
    mw.outputs.push_back(out_dir + "/edited.ppm");
    mw.outputs.push_back(out_dir + "/unedited.ppm");
    if (!edits.swap_parts.empty()) {
        auto region = parts_region_mask(pose, edits.swap_parts);
        mw.extra["locality"] = locality_stats(baseline, edited, region);
    }
    mw.extra["swap_face"] = swap_face;
    mw.extra["seed"] = seed;
    mw.write(out_dir);
    std::cout << "wrote " << out_dir << "/edited.ppm\n";
    return kOk;
}

int cmd_edit_blend(const std::string& ckpt, const std::string& source_stem,
                   const std::string& donor_stem, const std::string& mask_path, bool mask_head,
                   const std::string& pose_path, double cfg_scale, int steps, uint64_t seed,
                   const std::string& out_dir) {
    auto models = load_models_checked(ckpt, "diffusion", "train --stage diffusion first");
    ManifestWriter mw;
    mw.command = "edit-blend";
    mw.config = config_to_map(models.cfg);
    mw.inputs = {ckpt, source_stem + ".ppm", donor_stem + ".ppm", pose_path};
    Sample source = load_sample_stem(source_stem);
    Sample donor = load_sample_stem(donor_stem);
    DensePoseMap pose = read_dpmap(pose_path);
    Tensor<float> m;
    if (mask_head) {
        check(mask_path.empty(), "use either --mask or --mask-head, not both");
        m = face_mask(pose, models.latent_h(), models.latent_w());
    } else {
        check(!mask_path.empty(), "edit-blend requires --mask <archive> or --mask-head");
        m = read_archive(mask_path).get<float>("mask");
        mw.inputs.push_back(mask_path);
    }
    SampleOptions opt;
    opt.steps = steps;
    opt.cfg_scale = cfg_scale;
    opt.seed = seed;
    auto cond_s = build_conditions(models, source);
    auto cond_r = build_conditions(models, donor);
    auto img = blended_edit_sample(models, cond_s, cond_r, m, pose, opt);
    fs::create_directories(out_dir);
    write_ppm(out_dir + "/blended.ppm", img);
    mw.outputs.push_back(out_dir + "/blended.ppm");
    mw.extra["seed"] = seed;
    mw.write(out_dir);
    std::cout << "wrote " << out_dir << "/blended.ppm\n";
    return kOk;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, int64_t n, uint64_t seed,
             double cfg_scale, int steps, int jobs, const std::string& out_dir) {
    auto models = load_models_checked(ckpt, "diffusion", "train --stage diffusion first");
    ManifestWriter mw;
    mw.command = "eval";
    mw.config = config_to_map(models.cfg);
    mw.inputs = {ckpt, data_dir};
    Dataset ds = load_dataset(data_dir);
    if (n < 0) n = ds.size();
    check(n <= ds.size(), "eval: --n exceeds the dataset size");
    SampleOptions opt;
    opt.steps = steps;
    opt.cfg_scale = cfg_scale;
    jobs = resolve_jobs(jobs);
    EvalReport rep;
    rep.rows.resize(static_cast<size_t>(n));
    parallel_for(n, jobs, [&](int64_t i) {
        Dataset one;
        one.manifest = ds.manifest;
        one.pairs = {ds.pairs[static_cast<size_t>(i)]};
        auto sub = evaluate(models, one, 1, hash_u64(seed, static_cast<uint64_t>(i)), opt);
        sub.rows[0].id = i;
        rep.rows[static_cast<size_t>(i)] = sub.rows[0];
    });
    rep.finalize();
    fs::create_directories(out_dir);
    {
        std::ofstream f(out_dir + "/eval_report.json");
        f << eval_report_json(rep).dump(2) << "\n";
    }
    {
        std::ofstream f(out_dir + "/eval_report.csv");
        f << eval_report_csv(rep);
    }
    mw.outputs.push_back(out_dir + "/eval_report.json");
    mw.outputs.push_back(out_dir + "/eval_report.csv");
    mw.extra["n"] = n;
    mw.extra["seed"] = seed;
    mw.write(out_dir);
    std::cout << "ssim " << rep.aggregate.ssim << "  psnr " << rep.aggregate.psnr << "  fs_tgt "
              << rep.aggregate.fs_tgt << "  tex_err " << rep.aggregate.tex_err << "\n";
    return kOk;
}

int cmd_diagnose(const std::string& ckpt, const std::string& data_dir, const std::string& eps_str,
                 int64_t n, const std::string& out_dir) {
    auto models = load_models_checked(ckpt, "autoenc", "train --stage autoenc first");
    ManifestWriter mw;
    mw.command = "diagnose";
    mw.config = config_to_map(models.cfg);
    mw.inputs = {ckpt, data_dir};
    Dataset ds = load_dataset(data_dir);
    if (n < 0) n = ds.size();
    check(n <= ds.size(), "diagnose: --n exceeds the dataset size");
    std::vector<double> eps_list;
    std::stringstream ss(eps_str);
    std::string tok;
    while (std::getline(ss, tok, ',')) eps_list.push_back(std::stod(tok));
    check(!eps_list.empty(), "diagnose: empty --eps list");
    std::vector<Sample> samples;
    for (int64_t i = 0; i < n; ++i) samples.push_back(ds.pairs[static_cast<size_t>(i)].source);
    auto rep = deterioration_report(models.autoenc, samples, eps_list, 10, models.cfg.seed);
    fs::create_directories(out_dir);
    std::ofstream f(out_dir + "/deterioration.json");
    f << deterioration_to_json(rep).dump(2) << "\n";
    f.close();
    mw.outputs.push_back(out_dir + "/deterioration.json");
    mw.write(out_dir);
    for (const auto& row : rep.rows)
        std::cout << "eps " << row.eps << "  " << row.region << "  mse " << row.mse << "\n";
    return kOk;
}

int cmd_describe(const CommonOpts& co, const std::string& ckpt) {
    if (!ckpt.empty()) {
        auto models = load_models_checked(ckpt, "", "");
        std::cout << describe(models);
    } else {
        RunConfig cfg = load_config(co.config_path, parse_sets(co.sets));
        auto models = init_models<float>(cfg);
        std::cout << describe(models);
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mcld: multi-focal conditioned latent diffusion on a synthetic figure corpus"};
    app.require_subcommand(1);

    CommonOpts co;
    int64_t gen_n = 0;
    int jobs = 1;

    auto add_common = [&](CLI::App* cmd, bool with_out = true) {
        cmd->add_option("--config", co.config_path, "config file (key = value lines)");
        cmd->add_option("--set", co.sets, "override a config key, e.g. --set steps=100")
            ->take_all();
        if (with_out) cmd->add_option("--out", co.out_dir, "output directory")->required();
    };

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "render a paired dataset");
    add_common(gen);
    gen->add_option("--n", gen_n, "number of source/target pairs")->required();
    gen->add_option("--jobs", jobs, "parallel rendering workers (capped by MCLD_THREADS)");

    // train
    auto* train = app.add_subcommand("train", "train a stage (autoenc|face|diffusion)");
    add_common(train);
    std::string data_dir, stage = "diffusion", ablation = "full";
    std::string autoenc_ckpt, face_ckpt;
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--stage", stage, "autoenc|face|diffusion");
    train->add_option("--ablation", ablation, "B1|B2|B3|B4|B5|full");
    train->add_option("--autoenc-ckpt", autoenc_ckpt, "stage-1 autoencoder checkpoint");
    train->add_option("--face-ckpt", face_ckpt, "stage-1 face-encoder checkpoint");

    // sample
    auto* sample = app.add_subcommand("sample", "generate an image for a target pose");
    std::string ckpt, source_stem, pose_path;
    double cfg_scale = 3.5, eta = 0.0;
    int steps = 50;
    uint64_t seed = 0;
    sample->add_option("--ckpt", ckpt, "trained checkpoint")->required();
    sample->add_option("--source", source_stem, "source sample stem (expects .ppm/.dpmap)")
        ->required();
    sample->add_option("--pose", pose_path, "target pose .dpmap file")->required();
    sample->add_option("--cfg-scale", cfg_scale, "classifier-free guidance scale");
    sample->add_option("--steps", steps, "DDIM steps");
    sample->add_option("--eta", eta, "DDIM eta (0 = deterministic)");
    sample->add_option("--seed", seed, "sampling seed");
    sample->add_option("--out", co.out_dir, "output directory")->required();

    // edit
    auto* edit = app.add_subcommand("edit", "condition-swap editing");
    std::string donor_stem, swap_parts_str;
    bool swap_face = false;
    edit->add_option("--ckpt", ckpt, "trained checkpoint")->required();
    edit->add_option("--source", source_stem, "source sample stem")->required();
    edit->add_option("--donor", donor_stem, "donor sample stem");
    edit->add_option("--swap-parts", swap_parts_str,
                     "comma list of part names/ids whose atlas tiles come from the donor");
    edit->add_flag("--swap-face", swap_face, "take the face embedding from the donor");
    edit->add_option("--pose", pose_path, "target pose .dpmap file")->required();
    edit->add_option("--cfg-scale", cfg_scale, "guidance scale");
    edit->add_option("--steps", steps, "DDIM steps");
    edit->add_option("--seed", seed, "sampling seed");
    edit->add_option("--out", co.out_dir, "output directory")->required();

    // edit-blend
    auto* blend = app.add_subcommand("edit-blend", "mask-blended editing baseline");
    std::string mask_path;
    bool mask_head = false;
    blend->add_option("--ckpt", ckpt, "trained checkpoint")->required();
    blend->add_option("--source", source_stem, "source sample stem")->required();
    blend->add_option("--donor", donor_stem, "reference sample stem")->required();
    blend->add_option("--mask", mask_path, "archive with a latent-resolution 'mask' entry");
    blend->add_flag("--mask-head", mask_head, "use the head mask parsed from the pose map");
    blend->add_option("--pose", pose_path, "target pose .dpmap file")->required();
    blend->add_option("--cfg-scale", cfg_scale, "guidance scale");
    blend->add_option("--steps", steps, "DDIM steps");
    blend->add_option("--seed", seed, "sampling seed");
    blend->add_option("--out", co.out_dir, "output directory")->required();

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "quantitative evaluation on a dataset split");
    int64_t eval_n = -1;
    eval_cmd->add_option("--ckpt", ckpt, "trained checkpoint")->required();
    eval_cmd->add_option("--data", data_dir, "evaluation dataset directory")->required();
    eval_cmd->add_option("--n", eval_n, "pairs to evaluate (default: all)");
    eval_cmd->add_option("--seed", seed, "evaluation seed");
    eval_cmd->add_option("--cfg-scale", cfg_scale, "guidance scale");
    eval_cmd->add_option("--steps", steps, "DDIM steps");
    eval_cmd->add_option("--jobs", jobs, "parallel workers (capped by MCLD_THREADS)");
    eval_cmd->add_option("--out", co.out_dir, "output directory")->required();

    // diagnose
    auto* diag = app.add_subcommand("diagnose", "latent deterioration report");
    std::string eps_str = "0,0.1,0.2";
    int64_t diag_n = -1;
    diag->add_option("--ckpt", ckpt, "checkpoint with a trained autoencoder")->required();
    diag->add_option("--data", data_dir, "dataset directory")->required();
    diag->add_option("--eps", eps_str, "comma list of perturbation scales");
    diag->add_option("--n", diag_n, "samples to use (default: all)");
    diag->add_option("--out", co.out_dir, "output directory")->required();

    // describe
    auto* desc = app.add_subcommand("describe", "print model shapes and parameter counts");
    add_common(desc, /*with_out=*/false);
    std::string desc_ckpt;
    desc->add_option("--ckpt", desc_ckpt, "describe a checkpoint instead of a fresh config");

    // selfcheck
    app.add_subcommand("selfcheck", "run the built-in oracle suites");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(co, gen_n, jobs);
        if (train->parsed())
            return cmd_train(co, data_dir, stage, ablation, autoenc_ckpt, face_ckpt);
        if (sample->parsed())
            return cmd_sample(ckpt, source_stem, pose_path, cfg_scale, steps, eta, seed,
                              co.out_dir);
        if (edit->parsed())
            return cmd_edit(ckpt, source_stem, donor_stem, swap_parts_str, swap_face, pose_path,
                            cfg_scale, steps, seed, co.out_dir);
        if (blend->parsed())
            return cmd_edit_blend(ckpt, source_stem, donor_stem, mask_path, mask_head, pose_path,
                                  cfg_scale, steps, seed, co.out_dir);
        if (eval_cmd->parsed())
            return cmd_eval(ckpt, data_dir, eval_n, seed, cfg_scale, steps, jobs, co.out_dir);
        if (diag->parsed()) return cmd_diagnose(ckpt, data_dir, eps_str, diag_n, co.out_dir);
        if (desc->parsed()) return cmd_describe(co, desc_ckpt);
        if (app.get_subcommand("selfcheck")->parsed()) return selfcheck_main();
    } catch (const ArchiveError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    }
    return kUsage;
}
