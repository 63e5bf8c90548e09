#include "gkm/runner.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace gkm;

namespace {

Faults parse_faults(const std::vector<std::string>& names)
{
    Faults f;
    for (auto& n : names) {
        if (n == "skip_join_hash_update")
            f.skip_join_hash_update = true;
        else if (n == "skip_nonce_increment")
            f.skip_nonce_increment = true;
        else if (n == "groupit_shared_secret")
            f.groupit_shared_secret = true;
        else
            throw std::invalid_argument("unknown fault " + n);
    }
    return f;
}

std::string default_out_dir()
{
    const char* env = std::getenv("GKM_OUT_DIR");
    return env && *env ? env : ".";
}

void write_text(const std::string& path, const std::string& text)
{
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write " + path);
    out << text;
}

int report(const RunReport& rep, const std::string& report_path, const std::string& transcript_path, bool quiet)
{
    if (!transcript_path.empty())
        write_transcript(rep.transcript, transcript_path);
    std::string text = rep.to_text();
    if (!report_path.empty())
        write_text(report_path, text);
    if (quiet || !report_path.empty()) {
        for (auto& f : rep.failures)
            std::cout << "failure " << f << '\n';
        std::cout << text.substr(text.rfind("summary "));
    } else {
        std::cout << text;
    }
    return rep.ok() ? 0 : 1;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"group key management simulator"};
    app.require_subcommand(1);

    // run
    auto* run = app.add_subcommand("run", "replay a trace through KDC, transport and endpoints, then audit");
    std::string trace_path, checks_csv = "all", report_path, transcript_path;
    std::size_t collusion_cap = 20;
    std::uint64_t audit_seed = 1;
    bool quiet = false;
    run->add_option("trace", trace_path, "trace file ('-' for stdin)")->required();
    run->add_option("--checks", checks_csv, "comma list of bounds,agreement,secrecy,collusion,access, or all/none");
    run->add_option("--report", report_path, "write the full report here");
    run->add_option("--transcript", transcript_path, "export the message transcript");
    run->add_option("--collusion-cap", collusion_cap, "sampled accomplice devices per user leave");
    run->add_option("--audit-seed", audit_seed, "seed for accomplice sampling");
    run->add_flag("-q,--quiet", quiet, "print only failures and the summary");

    // gen
    auto* gen = app.add_subcommand("gen", "generate a random or scripted trace");
    GenConfig cfg;
    std::string scenario = "random", gen_out;
    std::vector<std::string> fault_names;
    std::vector<double> weights;
    gen->add_option("--seed", cfg.seed, "RNG seed");
    gen->add_option("--length", cfg.length, "number of events");
    gen->add_option("--dgs", cfg.dgs, "initial device groups");
    gen->add_option("--max-dgs", cfg.max_dgs, "upper limit on device groups");
    gen->add_option("--max-users", cfg.max_users, "users per subscriber group");
    gen->add_option("--max-devices", cfg.max_devices, "devices per device group");
    gen->add_option("--sgs", cfg.initial_sgs, "initial subscriber groups (0: random)");
    gen->add_option("--weights", weights,
                    "8 weights: user_join user_leave device_join device_leave user_join_empty_sg "
                    "user_leave_last_spot dg_join dg_leave")
        ->expected(8);
    gen->add_option("--fault", fault_names, "protocol fault to inject")
        ->check(CLI::IsMember({"skip_join_hash_update", "skip_nonce_increment", "groupit_shared_secret"}));
    gen->add_option("--scenario", scenario, "random or fig15")->check(CLI::IsMember({"random", "fig15"}));
    gen->add_option("-o,--out", gen_out, "output file (default stdout)");

    // figures
    auto* figs = app.add_subcommand("figures", "write cost-model data for figures 15-21");
    std::string out_dir;
    TimeConstants tc;
    std::vector<int> which;
    figs->add_option("--out-dir", out_dir, "output directory (default $GKM_OUT_DIR or .)");
    figs->add_option("--t0", tc.T0, "hash time, ns");
    figs->add_option("--t1", tc.T1, "symmetric operation time, ns");
    figs->add_option("--t2", tc.T2, "asymmetric decryption time, ns");
    figs->add_option("--figure", which, "restrict to these figures")->check(CLI::Range(15, 21));

    // audit
    auto* aud = app.add_subcommand("audit", "re-check an exported transcript");
    std::string audit_path, audit_checks = "secrecy,collusion,access";
    aud->add_option("transcript", audit_path, "transcript file")->required();
    aud->add_option("--checks", audit_checks, "comma list of secrecy,collusion,access");
    aud->add_option("--report", report_path, "write the full report here");
    aud->add_option("--collusion-cap", collusion_cap, "sampled accomplice devices per user leave");
    aud->add_option("--audit-seed", audit_seed, "seed for accomplice sampling");
    aud->add_flag("-q,--quiet", quiet, "print only failures and the summary");

    CLI11_PARSE(app, argc, argv);

    try {
        AuditOptions ao;
        ao.collusion_cap = collusion_cap;
        ao.seed = audit_seed;

        if (*run) {
            TraceFile t;
            if (trace_path == "-") {
                std::stringstream ss;
                ss << std::cin.rdbuf();
                t = trace_from_text(ss.str());
            } else {
                t = read_trace(trace_path);
            }
            RunChecks rc = RunChecks::parse(checks_csv);
            rc.keep_transcript = !transcript_path.empty();
            return report(run_trace(t, rc, ao), report_path, transcript_path, quiet);
        }
        if (*gen) {
            TraceFile t;
            if (scenario == "fig15") {
                t = fig15_trace(cfg.seed);
                t.faults = parse_faults(fault_names);
            } else {
                cfg.faults = parse_faults(fault_names);
                if (!weights.empty())
                    std::copy(weights.begin(), weights.end(), cfg.weights.begin());
                t = gen_trace(cfg);
            }
            write_text(gen_out, trace_to_text(t));
            return 0;
        }
        if (*figs) {
            fs::path dir = out_dir.empty() ? default_out_dir() : out_dir;
            fs::create_directories(dir);
            if (which.empty())
                which = {15, 16, 17, 18, 19, 20, 21};
            for (int f : which) {
                auto path = dir / ("fig" + std::to_string(f) + ".csv");
                write_text(path.string(), to_csv(emit_figure_data(f, tc)));
                std::cout << "wrote " << path.string() << '\n';
            }
            if (auto m = fig17_crossover())
                std::cout << "fig17 crossover M=" << *m << '\n';
            return 0;
        }
        if (*aud) {
            RunChecks rc = RunChecks::parse(audit_checks);
            return report(audit_transcript(read_transcript(audit_path), rc, ao), report_path, "", quiet);
        }
    } catch (const GenError& e) {
        std::cerr << "gen: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
