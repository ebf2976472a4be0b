// lcformer: synthetic corpus generation, MPC pretraining, diagnostics and probing.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lcf/checkpoint.hpp"
#include "lcf/diagnostics.hpp"
#include "lcf/features.hpp"
#include "lcf/run_config.hpp"
#include "lcf/training.hpp"

namespace fs = std::filesystem;
using namespace lcf;

namespace {

enum ExitCode : int { kOk = 0, kInput = 2, kIo = 3, kDiverged = 4, kInvariant = 5 };

struct DivergedError : Error {
    using Error::Error;
};
struct InvariantError : Error {
    using Error::Error;
};

struct CommonOpts {
    std::string config_file;
    std::string preset;
    long long seed = -1;
    long long threads = -1;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_file, "config file ([section] key = value)");
    cmd->add_option("--preset", o.preset, "desk-shared-u28 | desk-shared-u48 | desk-shared-8 | desk-unshared-8 | paper");
    cmd->add_option("--seed", o.seed, "root seed (train.seed)");
    cmd->add_option("--threads", o.threads, "worker threads (train.threads); 1 is bitwise reproducible");
    cmd->allow_extras();
}

/// defaults < preset < config file < LC_THREADS < --section.key=value < --seed/--threads
RunConfig resolve(const CLI::App* cmd, const CommonOpts& o) {
    RunConfig rc;
    if (!o.preset.empty()) rc.apply_preset(o.preset);
    if (!o.config_file.empty()) rc.apply_file(o.config_file);
    apply_thread_env(rc);
    for (const auto& extra : cmd->remaining()) rc.apply_override(extra);
    if (o.seed >= 0) rc.set("train.seed", std::to_string(o.seed));
    if (o.threads >= 0) rc.set("train.threads", std::to_string(o.threads));
    return rc;
}

fs::path make_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir);
    return fs::path(dir);
}

void echo_config(const RunConfig& rc, const fs::path& dir) { rc.write((dir / "config.ini").string()); }

std::vector<FeatureSequence> load_data(const std::string& path, const RunConfig& rc) {
    auto seqs = load_features(path);
    if (rc.flag("data.normalize"))
        for (auto& s : seqs) normalize_utterance(s);
    return seqs;
}

void require_dim(const ConformerConfig& model, const std::vector<FeatureSequence>& seqs) {
    for (const auto& s : seqs) {
        if (s.dim() != model.input_dim) {
            throw DimensionError("feature dimension mismatch in utterance " + s.utterance_id + ": expected " +
                                 std::to_string(model.input_dim) + ", found " + std::to_string(s.dim()));
        }
    }
}

/// Parses "5,6,7,8"; duplicates are dropped with a warning.
std::vector<std::size_t> parse_layers(const std::string& list) {
    std::vector<std::size_t> out;
    std::set<std::size_t> seen;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = detail::trim(item);
        if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
            throw ConfigError("--layers: '" + item + "' is not a layer index");
        }
        const auto m = static_cast<std::size_t>(std::stoull(item));
        if (!seen.insert(m).second) {
            std::cerr << "warning: duplicate layer " << m << " in --layers ignored\n";
            continue;
        }
        out.push_back(m);
    }
    if (out.empty()) throw ConfigError("--layers is empty");
    return out;
}

// ---------------------------------------------------------------------------

int cmd_synth(const RunConfig& rc, const std::string& out_dir) {
    const auto cfg = rc.synth();
    if (cfg.num_utts == 0) std::cerr << "warning: data.num_utts is 0; writing an empty corpus\n";
    const auto corpus = synth_corpus(cfg);
    const auto dir = make_dir(out_dir);
    save_features(corpus.sequences, (dir / "features.lcfb").string());
    save_labels(corpus.labels, (dir / "labels.lclb").string());
    echo_config(rc, dir);
    std::size_t frames = 0;
    for (const auto& s : corpus.sequences) frames += s.num_frames();
    std::cout << "utterances " << corpus.sequences.size() << ", frames " << frames << ", classes " << corpus.num_classes
              << ", dim " << cfg.dim << "\n";
    return kOk;
}

int cmd_pretrain(const RunConfig& rc, const std::string& data_path, const std::string& out_dir, const std::string& resume) {
    const auto model = rc.model();
    const auto tc = rc.train();
    const auto dir = make_dir(out_dir);
    echo_config(rc, dir);

    if (rc.flag("train.emit_only")) {
        const auto pc = param_count(model);
        std::cout << "config-emit only: resolved config written to " << (dir / "config.ini").string() << "\n"
                  << "encoder parameters " << pc.total_encoder << " (frontend " << pc.frontend << ", per layer "
                  << pc.per_layer << "), predictor " << pc.predictor << "\n";
        return kOk;
    }

    const auto seqs = load_data(data_path, rc);
    require_dim(model, seqs);
    const std::size_t cut = validation_split_point(seqs.size(), rc.real("data.val_fraction"));
    const std::vector<FeatureSequence> train_set(seqs.begin(), seqs.begin() + static_cast<std::ptrdiff_t>(cut));
    const std::vector<FeatureSequence> val_set(seqs.begin() + static_cast<std::ptrdiff_t>(cut), seqs.end());

    std::optional<TrainState<float>> start;
    if (!resume.empty()) {
        start = state_from_checkpoint<float>(load_checkpoint(resume));
        if (!(start->store.config() == model)) {
            throw ContractError("checkpoint " + resume + " was trained with a different model config");
        }
        std::cout << "resuming at step " << start->step << "\n";
    }

    const auto metrics_path = (dir / "metrics.jsonl").string();
    std::ofstream metrics(metrics_path, start ? std::ios::app : std::ios::trunc);
    if (!metrics) throw IoError("cannot open " + metrics_path);

    TrainHooks<float> hooks;
    hooks.on_metrics = [&](const MetricsRow& row) {
        metrics << row.to_json() << '\n';
        if (!metrics) throw IoError("failed writing " + metrics_path);
        if (row.val_loss) {
            std::cout << "step " << row.step << " train " << row.train_loss << " val " << *row.val_loss << "\n";
        }
    };
    hooks.on_validation = [&](const TrainState<float>& st) {
        metrics.flush();
        save_checkpoint(state_checkpoint(st), (dir / "last.ckpt").string());
    };

    auto res = train<float>(train_set, val_set, model, tc, std::move(start), hooks);
    metrics.flush();

    save_checkpoint(state_checkpoint(res.state), (dir / "last.ckpt").string());
    if (res.state.best_store) {
        Checkpoint best;
        put_store(best, *res.state.best_store);
        best.meta.emplace_back("state.step", std::to_string(res.state.best_step));
        best.meta.emplace_back("state.val_loss", exact_double(res.state.best_val));
        save_checkpoint(best, (dir / "best.ckpt").string());
    }
    if (res.diverged) throw DivergedError("training diverged at " + res.message + "; last good state kept in last.ckpt");
    save_checkpoint(state_checkpoint(res.state), (dir / "final.ckpt").string());
    std::cout << "done: step " << res.state.step << ", best validation " << res.state.best_val << " at step "
              << res.state.best_step << "\n";
    return kOk;
}

std::vector<FeatureSequence> eval_split(const RunConfig& rc, const std::string& data_path, const ConformerConfig& model) {
    auto seqs = load_data(data_path, rc);
    require_dim(model, seqs);
    const std::size_t cut = validation_split_point(seqs.size(), rc.real("data.val_fraction"));
    return {seqs.begin() + static_cast<std::ptrdiff_t>(cut), seqs.end()};
}

int cmd_diagnose(const RunConfig& rc, const std::string& ckpt_path, const std::string& data_path, const std::string& out_dir,
                 const std::string& which) {
    const auto dir = make_dir(out_dir);
    echo_config(rc, dir);
    const auto base = [&](const char* stem) { return std::pair{(dir / (std::string(stem) + ".csv")).string(), (dir / (std::string(stem) + ".jsonl")).string()}; };

    if (which == "flops") {
        ConformerConfig model = rc.model();
        if (!ckpt_path.empty()) model = get_model_config(load_checkpoint(ckpt_path));
        const auto rep = flop_report(model, rc.size("diag.flop_frames"), rc.depth(), rc.size("diag.sli_layers"));
        const auto [csv, js] = base("flops");
        report::write_flops(rep, csv, js);
        const auto pc = param_count(model);
        std::cout << "block macs " << rep.block << ", training block ratio " << rep.training_block_ratio
                  << ", SLI(" << rep.sli_layers << ") block ratio " << rep.sli_block_ratio << ", encoder parameters "
                  << pc.total_encoder << "\n";
        return kOk;
    }

    if (ckpt_path.empty()) throw ConfigError("--checkpoint is required for --which " + which);
    if (data_path.empty()) throw ConfigError("--data is required for --which " + which);
    const auto store = get_store<float>(load_checkpoint(ckpt_path));
    const auto& model = store.config();
    const auto eval = eval_split(rc, data_path, model);
    const std::size_t h = model.max_layers;

    if (which == "transitions") {
        std::vector<LayerTrace<float>> traces;
        for (const auto& s : eval) traces.push_back(forward(s.frames, store, h, true).trace);
        const auto rep = layer_transitions(traces, model.share_params ? "shared" : "unshared");
        const auto [csv, js] = base("transitions");
        report::write_transitions(rep, csv, js);
        std::cout << rep.transitions.size() << " transitions over " << rep.frames << " frames\n";
        return kOk;
    }
    if (which == "grads") {
        if (!model.share_params) throw ContractError("--which grads needs a parameter-shared checkpoint");
        const auto store64 = store.cast<double>();
        const auto tc = rc.train();
        Rng mask_rng = derive_rng(rc.size("train.seed"), "diag-grads");
        std::vector<MpcExample<double>> batch;
        for (std::size_t i = 0; i < std::min(rc.size("diag.grad_batch"), eval.size()); ++i) {
            batch.push_back(make_example<double>(eval[i], tc.mask, tc.mask_policy, mask_rng));
        }
        const auto gd = gradient_decomposition(store64, batch, rc.size("diag.grad_depth"), tc.loss_mode);
        if (!(gd.sum_relative_error <= rc.real("diag.grad_tolerance"))) {
            throw InvariantError("per-layer gradient contributions do not sum to the shared gradient (relative error " +
                                 std::to_string(gd.sum_relative_error) + ")");
        }
        const auto [csv, js] = base("grads");
        report::write_grads(gd, csv, js);
        std::cout << "sum identity relative error " << gd.sum_relative_error << ", scaling ratio " << gd.scaling_ratio
                  << ", mean pairwise cosine " << gd.mean_pairwise_cosine() << "\n";
        return kOk;
    }
    if (which == "project") {
        const std::string& id = rc.text("diag.utterance");
        const FeatureSequence* seq = id.empty() ? &eval.front() : nullptr;
        for (const auto& s : eval)
            if (!seq && s.utterance_id == id) seq = &s;
        if (!seq) throw ContractError("utterance " + id + " is not in the evaluation split");
        const std::size_t start = rc.size("diag.frame_start");
        const std::size_t end = start + rc.size("diag.frame_count");
        const auto fr = forward(seq->frames, store, h, true);
        const auto proj = project_2d(fr.trace, start, end);
        const auto [csv, js] = base("projection");
        report::write_projection(proj, start, csv, js);
        std::cout << "projected " << seq->utterance_id << " frames [" << start << ", " << end << "), explained variance "
                  << proj.explained_variance[0] << ", " << proj.explained_variance[1]
                  << (proj.degenerate ? " (degenerate)" : "") << "\n";
        return kOk;
    }
    throw ConfigError("unknown --which '" + which + "' (transitions|grads|project|flops)");
}

int cmd_probe(const RunConfig& rc, const std::string& ckpt_path, const std::string& data_path, const std::string& labels_path,
              const std::string& layers_arg, const std::string& out_dir) {
    const auto layers = parse_layers(layers_arg);
    const auto dir = make_dir(out_dir);
    echo_config(rc, dir);
    const auto store = get_store<float>(load_checkpoint(ckpt_path));
    const auto seqs = load_data(data_path, rc);
    require_dim(store.config(), seqs);
    const auto labels = load_labels(labels_path);
    std::size_t classes = 0;
    for (const auto& l : labels) classes = std::max<std::size_t>(classes, l.num_classes);
    const auto rows = sli_sweep(store, seqs, labels, layers, classes, rc.real("diag.probe_train_fraction"), rc.probe());
    report::write_sweep(rows, (dir / "sweep.csv").string(), (dir / "sweep.jsonl").string());
    for (const auto& r : rows) std::cout << "layer " << r.layer << " accuracy " << r.accuracy << "\n";
    return kOk;
}

int cmd_config(const RunConfig& rc, const std::string& out) {
    if (out.empty()) {
        std::cout << rc.emit();
    } else {
        rc.write(out);
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lcformer: parameter-shared Conformer pretraining and layer-consistency diagnostics"};
    app.require_subcommand(1);

    CommonOpts synth_o, pre_o, diag_o, probe_o, conf_o;
    std::string out, data, labels, checkpoint, resume, which, layers;

    auto* synth = app.add_subcommand("synth", "write a synthetic labelled corpus");
    add_common(synth, synth_o);
    synth->add_option("--out", out, "output directory")->required();
    long long num_utts = -1;
    synth->add_option("--num-utts", num_utts, "number of utterances (data.num_utts)");

    auto* pre = app.add_subcommand("pretrain", "MPC pretraining");
    add_common(pre, pre_o);
    pre->add_option("--data", data, "feature file (LCFB)");
    pre->add_option("--out", out, "output directory")->required();
    pre->add_option("--resume", resume, "resume from a last.ckpt/final.ckpt");

    auto* diag = app.add_subcommand("diagnose", "layer-consistency diagnostics");
    add_common(diag, diag_o);
    diag->add_option("--checkpoint", checkpoint, "model checkpoint");
    diag->add_option("--data", data, "feature file (LCFB)");
    diag->add_option("--out", out, "output directory")->required();
    diag->add_option("--which", which, "transitions | grads | project | flops")->required();

    auto* probe = app.add_subcommand("probe", "linear-probe sweep over SLI depths");
    add_common(probe, probe_o);
    probe->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    probe->add_option("--data", data, "feature file (LCFB)")->required();
    probe->add_option("--labels", labels, "label file (LCLB)")->required();
    probe->add_option("--layers", layers, "comma-separated SLI depths, e.g. 5,6,7,8")->required();
    probe->add_option("--out", out, "output directory")->required();

    auto* conf = app.add_subcommand("config", "print the resolved configuration");
    add_common(conf, conf_o);
    conf->add_option("--out", out, "write to a file instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kInput;
    }

    try {
        if (synth->parsed()) {
            auto rc = resolve(synth, synth_o);
            if (num_utts >= 0) rc.set("data.num_utts", std::to_string(num_utts));
            return cmd_synth(rc, out);
        }
        if (pre->parsed()) {
            const auto rc = resolve(pre, pre_o);
            if (data.empty() && !rc.flag("train.emit_only")) throw ConfigError("--data is required");
            return cmd_pretrain(rc, data, out, resume);
        }
        if (diag->parsed()) return cmd_diagnose(resolve(diag, diag_o), checkpoint, data, out, which);
        if (probe->parsed()) return cmd_probe(resolve(probe, probe_o), checkpoint, data, labels, layers, out);
        if (conf->parsed()) return cmd_config(resolve(conf, conf_o), out);
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    } catch (const DivergedError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDiverged;
    } catch (const InvariantError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInvariant;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDiverged;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInput;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kInvariant;
    }
    return kInput;
}
