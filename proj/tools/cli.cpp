#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/chrono.h>
#include <fmt/ostream.h>
#include <spdlog/spdlog.h>

#include "dcmg/io.hpp"

namespace dcmg::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* version = "0.3.0";

struct Options {
    std::string grid, gains, scenario, request;
    std::string out = ".";
    double prefilter = 0.0;
    bool compensator = false;
    double compensator_bw = 1000.0;
    std::string policy = "keep";
    double eta = 0.0;
    double tol = 1e-3;
    double bandwidth = 100.0;
    long seed = 0;
    bool no_timestamp = false;

    // Set after parsing.
    bool has_prefilter = false, has_eta = false, has_seed = false;
};

class Failure : public std::runtime_error {
public:
    Failure(int code, const std::string& what) : std::runtime_error(what), code(code) {}
    int code;
};

SynthesisOptions synthesis_options(const Options& o) {
    SynthesisOptions s;
    if (o.has_eta) s.eta = o.eta;
    s.assumption2_tol = o.tol;
    s.target_bandwidth_hz = o.bandwidth;
    s.validate();
    return s;
}

ControllerStackOptions stack_options(const Options& o) {
    ControllerStackOptions s;
    if (o.has_prefilter) s.prefilter_bw_hz = o.prefilter;
    s.compensator = o.compensator;
    s.compensator_bw_hz = o.compensator_bw;
    s.validate();
    return s;
}

io::Header header(const Options& o, const std::string& verb) {
    io::Header h{fmt::format("dcmg {} {}", version, verb)};
    if (o.has_seed) h.push_back(fmt::format("seed {}", o.seed));
    if (!o.no_timestamp) {
        const auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
        h.push_back(fmt::format("generated {:%Y-%m-%dT%H:%M:%SZ}", now));
    }
    return h;
}

GridGraph load_grid(const Options& o) {
    if (o.grid.empty()) throw InputError("--grid is required");
    return io::read_file(o.grid, [](std::istream& is) { return io::read_grid(is); });
}

io::GainsFile load_gains(const Options& o, const GridGraph& g) {
    if (o.gains.empty()) throw InputError("--gains is required");
    auto f = io::read_file(o.gains, [](std::istream& is) { return io::read_gains(is); });
    for (const auto& id : g.ids())
        if (!f.gains.contains(id)) throw InputError(fmt::format("{}: no gains for DGU {}", o.gains, id.value()));
    return f;
}

void write(const Options& o, const std::string& name, const std::string& contents, std::ostream& out) {
    const auto p = fs::path(o.out) / name;
    io::save(p, contents);
    fmt::print(out, "wrote {}\n", p.string());
}

template <class Fn>
std::string render(Fn&& fn) {
    std::ostringstream ss;
    fn(ss);
    return ss.str();
}

ControllerGains synthesize_one(const GridGraph& g, DguId id, const SynthesisOptions& so) {
    auto r = solve_problem_O(augmented_dgu(g, id), so);
    if (auto* k = std::get_if<ControllerGains>(&r)) return *k;
    if (auto* i = std::get_if<Infeasible>(&r))
        throw Failure(infeasible, fmt::format("DGU {}: infeasible: {}", id.value(), i->reason));
    throw Failure(numerical_failure,
                  fmt::format("DGU {}: numerical failure: {}", id.value(), std::get<NumericalFailure>(r).reason));
}

std::string gains_text(const RowVector3d& k) { return fmt::format("[{:.6g}, {:.6g}, {:.6g}]", k(0), k(1), k(2)); }

// Algorithm step B for one unit; rejections are fatal for the verb.
void design_filters(const GridGraph& g, DguId id, const ControllerGains& k, const Options& o, io::GainsFile& f,
                    std::ostream& out) {
    const auto aug = augmented_dgu(g, id);
    if (o.has_prefilter) {
        const auto fcl = closed_loop_reference_tf(aug, k);
        const auto tmpl = desired_tf_template(o.prefilter, std::max(1, fcl.relative_degree()));
        auto r = with_fallback(design_prefilter(fcl, tmpl), o.prefilter);
        if (auto* d = std::get_if<Rejection>(&r))
            throw Failure(infeasible, fmt::format("DGU {}: prefilter rejected: {}", id.value(), d->message));
        const auto& fd = std::get<FilterDesign>(r);
        f.prefilters[id] = fd.realized;
        fmt::print(out, "DGU {}: prefilter order {} {}\n", id.value(), fd.realized.den.degree(), fd.note);
    }
    if (o.compensator) {
        const auto [gd, gu] = disturbance_tfs(aug, k);
        auto r = with_fallback(design_disturbance_compensator(gd, gu), o.compensator_bw);
        if (auto* d = std::get_if<Rejection>(&r))
            throw Failure(infeasible, fmt::format("DGU {}: compensator rejected: {}", id.value(), d->message));
        const auto& fd = std::get<FilterDesign>(r);
        f.compensators[id] = fd.realized;
        fmt::print(out, "DGU {}: compensator {}\n", id.value(), fd.note);
    }
}

int cmd_synthesize(const Options& o, std::ostream& out) {
    const auto g = load_grid(o);
    const auto so = synthesis_options(o);
    io::GainsFile f;
    int code = ok;
    std::vector<std::string> problems;
    for (const auto& id : g.ids()) {
        try {
            const auto k = synthesize_one(g, id, so);
            const auto cert = verify_certificate(augmented_dgu(g, id), k, 0.5 * so.feasibility_margin);
            fmt::print(out, "DGU {}: K = {} eta = {:.6g} certificate {}\n", id.value(), gains_text(k.k), k.eta,
                       cert.passed() ? "passed" : "FAILED");
            if (!cert.passed()) throw Failure(numerical_failure, fmt::format("DGU {}: certificate check failed", id.value()));
            f.gains[id] = k;
            design_filters(g, id, k, o, f, out);
        } catch (const Failure& e) {
            problems.push_back(e.what());
            code = std::max(code, e.code);
        }
    }
    if (code != ok) {
        std::string msg;
        for (const auto& p : problems) msg += (msg.empty() ? "" : "\n") + p;
        throw Failure(code, msg);
    }
    write(o, "gains.ini", render([&](std::ostream& os) { io::write_gains(os, f, header(o, "synthesize")); }), out);
    return ok;
}

int cmd_certify(const Options& o, std::ostream& out) {
    const auto g = load_grid(o);
    const auto f = load_gains(o, g);
    const auto so = synthesis_options(o);
    io::CertificateFile c;
    c.global = certify_global_stability(g, f.gains, so.assumption2_tol);
    bool all = c.global.passed();
    for (const auto& id : g.ids()) {
        c.local[id] = verify_certificate(augmented_dgu(g, id), f.gains.at(id), 0.5 * so.feasibility_margin);
        all = all && c.local[id].passed();
        fmt::print(out, "DGU {}: local certificate {}\n", id.value(), c.local[id].passed() ? "passed" : "FAILED");
    }
    fmt::print(out, "max Re(eig) = {:.6g}, coupling term max |entry| = {:.3g} (tol {:.3g})\n", c.global.max_real_eig,
               c.global.coupling_term_max_abs, so.assumption2_tol);
    fmt::print(out, "global certificate {}\n", c.global.passed() ? "passed" : "FAILED");
    write(o, "certificate.ini", render([&](std::ostream& os) { io::write_certificate(os, c, header(o, "certify")); }),
          out);
    write(o, "spectrum.csv", render([&](std::ostream& os) { write_spectrum_csv(os, c.global.eigenvalues); }), out);
    return all ? ok : infeasible;
}

int cmd_plug_check(const Options& o, std::ostream& out) {
    const auto g = load_grid(o);
    if (o.request.empty()) throw InputError("--request is required");
    const auto req = io::read_file(o.request, [](std::istream& is) { return io::read_request(is); });
    PnpOptions po;
    po.synthesis = synthesis_options(o);
    po.policy = parse_policy(o.policy);
    std::map<DguId, ControllerGains> current;
    if (o.gains.empty()) {
        spdlog::info("no --gains given; synthesizing the current controllers");
        for (const auto& id : g.ids()) current[id] = synthesize_one(g, id, po.synthesis);
    } else {
        current = load_gains(o, g).gains;
    }
    const auto d = evaluate(g, current, req, po);
    fmt::print(out, "{} of DGU {}: {}\n", d.kind == PlugRequest::Kind::plug_in ? "plug-in" : "unplug", d.target.value(),
               d.allowed ? "allowed" : "denied");
    for (const auto& [id, v] : d.verdicts)
        fmt::print(out, "  DGU {}: {}{}\n", id.value(), to_string(v.outcome), v.note.empty() ? "" : " (" + v.note + ")");
    if (!d.allowed) fmt::print(out, "  reason: {}\n", d.denial_reason);
    write(o, "decision.ini", render([&](std::ostream& os) { io::write_decision(os, d, header(o, "plug-check")); }),
          out);
    return d.allowed ? ok : infeasible;
}

int cmd_simulate(const Options& o, std::ostream& out) {
    const auto g = load_grid(o);
    const auto f = load_gains(o, g);
    if (o.scenario.empty()) throw InputError("--scenario is required");
    const auto sc = io::read_file(o.scenario, [](std::istream& is) { return io::read_scenario(is); });
    SimConfig cfg;
    cfg.stack = stack_options(o);
    cfg.synthesis = synthesis_options(o);
    cfg.policy = parse_policy(o.policy);
    const auto tr = simulate(g, f.gains, sc, cfg);

    std::vector<double> cuts{0.0};
    for (const auto& e : sc.events)
        if (e.time > cuts.back()) cuts.push_back(e.time);
    cuts.push_back(sc.duration);
    std::vector<io::MetricsRow> rows;
    for (std::size_t w = 0; w + 1 < cuts.size(); ++w) {
        if (!(cuts[w + 1] > cuts[w])) continue;
        for (const auto& id : tr.dgus) {
            const auto m = metrics(tr, id, cuts[w], cuts[w + 1]);
            rows.push_back({id, cuts[w], cuts[w + 1], m});
            fmt::print(out, "DGU {} [{:g}, {:g}) s: settling {:.4g} s, peak |V - ref| {:.4g} V, final error {:.3g} V\n",
                       id.value(), cuts[w], cuts[w + 1], m.settling_time, m.peak_deviation, m.steady_state_error);
        }
    }
    fmt::print(out, "{} samples, {} steps ({} rejected), {} factorizations\n", tr.t.size(), tr.stats.steps,
               tr.stats.rejected, tr.stats.factorizations);
    write(o, "trace.csv", render([&](std::ostream& os) { io::write_trace_csv(os, tr); }), out);
    write(o, "metrics.csv", render([&](std::ostream& os) { io::write_metrics(os, rows); }), out);
    write(o, "events.log", render([&](std::ostream& os) {
              for (const auto& m : tr.markers) fmt::print(os, "{:.9g}\t{}\n", m.t, m.what);
              for (const auto& w : tr.warnings) fmt::print(os, "warning\t{}\n", w);
          }),
          out);
    return ok;
}

int cmd_analyze(const Options& o, std::ostream& out) {
    const auto g = load_grid(o);
    const auto f = load_gains(o, g);
    const auto freqs = log_grid();
    const auto closed = spectrum(closed_loop_matrix(g, f.gains));
    const auto open = spectrum(assemble_qsl_overall(g).a);
    const auto full = spectrum(assemble_full_line_model(g, LineCoupling::dynamic).a);
    fmt::print(out, "closed loop: {} eigenvalues, max Re {:.6g}\n", closed.eigenvalues.size(),
               closed.eigenvalues.empty() ? 0.0 : std::max_element(closed.eigenvalues.begin(), closed.eigenvalues.end(),
                                                                   [](cplx a, cplx b) { return a.real() < b.real(); })
                                                      ->real());
    write(o, "closed_loop_spectrum.csv", render([&](std::ostream& os) { write_spectrum_csv(os, closed.eigenvalues); }), out);
    write(o, "open_loop_spectrum.csv", render([&](std::ostream& os) { write_spectrum_csv(os, open.eigenvalues); }), out);
    write(o, "full_line_spectrum.csv", render([&](std::ostream& os) { write_spectrum_csv(os, full.eigenvalues); }), out);
    const auto mimo = frequency_response(reference_to_voltage(g, f.gains), freqs);
    write(o, "reference_response.csv", render([&](std::ostream& os) { write_response_csv(os, mimo); }), out);
    io::GainsFile filt;
    for (const auto& id : g.ids()) {
        const auto aug = augmented_dgu(g, id);
        const auto& k = f.gains.at(id);
        const auto fcl = closed_loop_reference_tf(aug, k);
        write(o, fmt::format("F_{}.csv", id.value()),
              render([&](std::ostream& os) { write_response_csv(os, frequency_response(fcl, freqs)); }), out);
        design_filters(g, id, k, o, filt, out);
        if (filt.prefilters.contains(id)) {
            const auto& c = filt.prefilters.at(id);
            write(o, fmt::format("prefilter_{}.csv", id.value()),
                  render([&](std::ostream& os) { write_response_csv(os, frequency_response(c, freqs)); }), out);
            write(o, fmt::format("shaped_F_{}.csv", id.value()),
                  render([&](std::ostream& os) { write_response_csv(os, frequency_response(c * fcl, freqs)); }), out);
        }
        if (filt.compensators.contains(id)) {
            const auto& n = filt.compensators.at(id);
            write(o, fmt::format("compensator_{}.csv", id.value()),
                  render([&](std::ostream& os) { write_response_csv(os, frequency_response(n, freqs)); }), out);
        }
    }
    return ok;
}

int cmd_export(const Options& o, std::ostream& out) {
    const auto g = load_grid(o);
    auto f = load_gains(o, g);
    for (const auto& id : g.ids()) design_filters(g, id, f.gains.at(id), o, f, out);
    write(o, "model.ini", render([&](std::ostream& os) { io::write_gains(os, f, header(o, "export")); }), out);
    const auto a = closed_loop_matrix(g, f.gains);
    const auto labels = assemble_augmented_overall(g).states;
    write(o, "closed_loop.csv", render([&](std::ostream& os) {
              for (std::size_t i = 0; i < labels.size(); ++i) os << (i ? "," : "") << labels[i];
              os << '\n';
              for (Eigen::Index r = 0; r < a.rows(); ++r) {
                  for (Eigen::Index c = 0; c < a.cols(); ++c) os << (c ? "," : "") << io::format_number(a(r, c));
                  os << '\n';
              }
          }),
          out);
    return ok;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"DC microgrid plug-and-play voltage control toolkit", "dcmg"};
    app.set_version_flag("--version", version);
    app.require_subcommand(1);
    Options o;

    auto add_common = [&](CLI::App* s, bool gains_required) {
        s->add_option("--grid", o.grid, "grid description file")->required()->check(CLI::ExistingFile);
        auto* gopt = s->add_option("--gains", o.gains, "gains file");
        if (gains_required) gopt->required();
        s->add_option("--out", o.out, "output directory")->capture_default_str();
        s->add_option("--eta", o.eta, "override the LMI eta")->check(CLI::PositiveNumber);
        s->add_option("--tol", o.tol, "coupling tolerance for the global check")->capture_default_str()
            ->check(CLI::PositiveNumber);
        s->add_option("--bandwidth", o.bandwidth, "target closed-loop bandwidth in Hz (0 leaves gains free)")
            ->capture_default_str()
            ->check(CLI::NonNegativeNumber);
        s->add_option("--seed", o.seed, "recorded in output headers; the solver is deterministic");
        s->add_flag("--no-timestamp", o.no_timestamp, "omit the generation time from output headers");
        s->add_option("--policy", o.policy, "keep or retune")->capture_default_str()
            ->check(CLI::IsMember({"keep", "keep-if-valid", "retune"}));
    };
    auto add_stack = [&](CLI::App* s) {
        s->add_option("--prefilter", o.prefilter, "design reference prefilters for this bandwidth (Hz)")
            ->check(CLI::PositiveNumber);
        s->add_flag("--compensator", o.compensator, "design load-current compensators");
        s->add_option("--compensator-bandwidth", o.compensator_bw, "bandwidth for a realizable compensator (Hz)")
            ->capture_default_str()
            ->check(CLI::PositiveNumber);
    };

    auto* syn = app.add_subcommand("synthesize", "design decentralized controllers for every unit");
    add_common(syn, false);
    add_stack(syn);
    auto* cert = app.add_subcommand("certify", "check local and global stability certificates");
    add_common(cert, true);
    auto* plug = app.add_subcommand("plug-check", "decide a plug-in or unplug request");
    add_common(plug, false);
    plug->add_option("--request", o.request, "request file")->required()->check(CLI::ExistingFile);
    auto* sim = app.add_subcommand("simulate", "simulate a scenario");
    add_common(sim, true);
    add_stack(sim);
    sim->add_option("--scenario", o.scenario, "scenario file")->required()->check(CLI::ExistingFile);
    auto* ana = app.add_subcommand("analyze", "spectra and frequency responses");
    add_common(ana, true);
    add_stack(ana);
    auto* exp = app.add_subcommand("export", "export filters and the closed-loop matrix");
    add_common(exp, true);
    add_stack(exp);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return input_error;
    }
    for (auto* s : {syn, cert, plug, sim, ana, exp}) {
        if (!s->parsed()) continue;
        if (auto* p = s->get_option_no_throw("--prefilter")) o.has_prefilter = p->count() > 0;
        o.has_eta = s->get_option("--eta")->count() > 0;
        o.has_seed = s->get_option("--seed")->count() > 0;
    }

    try {
        if (syn->parsed()) return cmd_synthesize(o, out);
        if (cert->parsed()) return cmd_certify(o, out);
        if (plug->parsed()) return cmd_plug_check(o, out);
        if (sim->parsed()) return cmd_simulate(o, out);
        if (ana->parsed()) return cmd_analyze(o, out);
        if (exp->parsed()) return cmd_export(o, out);
    } catch (const Failure& e) {
        fmt::print(err, "error: {}\n", e.what());
        return e.code;
    } catch (const InputError& e) {
        fmt::print(err, "input error: {}\n", e.what());
        return input_error;
    } catch (const SimError& e) {
        fmt::print(err, "simulation failed: {}\n", e.what());
        return numerical_failure;
    } catch (const AnalysisError& e) {
        fmt::print(err, "analysis failed: {}\n", e.what());
        return numerical_failure;
    } catch (const std::exception& e) {
        fmt::print(err, "numerical failure: {}\n", e.what());
        return numerical_failure;
    }
    return input_error;
}

}  // namespace dcmg::cli
