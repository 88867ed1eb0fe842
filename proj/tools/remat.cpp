// Command-line front end: partition a forward graph, solve a measured chain
// into a feasible schedule, replay schedules, and sweep budgets into a CSV.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "remat/chain_dp.hpp"
#include "remat/ingest.hpp"
#include "remat/ilp_solver.hpp"
#include "remat/partition.hpp"
#include "remat/pipeline.hpp"
#include "remat/simulate.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitInfeasible = 3;
constexpr int kExitTimeout = 4;

int env_threads() {
    const char* v = std::getenv("REMAT_THREADS");
    if (!v) return 0;
    int n = std::atoi(v);
    return n > 0 ? n : 0;
}

struct SolveFlags {
    remat::Bytes memory = 0;
    int n_peak = 20;
    int n_save = 20;
    int units = 500;
    double time_limit = 120.0;
    int threads = 0;
    bool no_classes = false;
    std::string save_options;
    std::string load_options;
};

void add_solve_flags(CLI::App* cmd, SolveFlags& f, bool with_memory) {
    if (with_memory)
        cmd->add_option("--memory", f.memory, "activation memory budget in bytes")
            ->required();
    cmd->add_option("--npeak", f.n_peak, "number of peak-budget levels per block");
    cmd->add_option("--nsave", f.n_save, "number of save-budget levels per peak");
    cmd->add_option("--units", f.units, "memory quantization units for the chain table");
    cmd->add_option("--time-limit", f.time_limit, "per-instance solver limit in seconds");
    cmd->add_option("--threads", f.threads, "worker cap (default: REMAT_THREADS or cores)");
    cmd->add_flag("--no-classes", f.no_classes, "solve every block separately");
    cmd->add_option("--save-options", f.save_options, "write the per-class option menus");
    cmd->add_option("--load-options", f.load_options, "reuse previously saved option menus");
}

remat::SolveSettings to_settings(const SolveFlags& f) {
    remat::SolveSettings s;
    s.memory = f.memory;
    s.n_peak = f.n_peak;
    s.n_save = f.n_save;
    s.units = f.units;
    s.time_limit_seconds = f.time_limit;
    s.threads = f.threads > 0 ? f.threads : env_threads();
    s.use_classes = !f.no_classes;
    return s;
}

void write_options_file(const remat::Chain& chain, const remat::MenuSet& menus,
                        const std::string& path) {
    remat::Json j;
    j["format_version"] = remat::kFormatVersion;
    j["kind"] = "options";
    remat::Json classes = remat::Json::array();
    for (const remat::ClassMenu& c : menus.classes) {
        remat::Json jc;
        jc["class_id"] = c.class_id;
        jc["representative"] = c.representative;
        jc["members"] = c.members;
        jc["options"] = remat::encode_options(chain.blocks[c.representative], c.options);
        classes.push_back(jc);
    }
    j["classes"] = classes;
    remat::detail::write_document(j, path);
}

remat::MenuSet read_options_file(const remat::Chain& chain, const std::string& path) {
    remat::Json j = remat::detail::read_document(path, "options");
    remat::detail::require_fields(j, {"format_version", "kind", "classes"}, {}, path);
    remat::MenuSet out;
    std::vector<int> class_of_block(chain.length(), -1);
    for (const remat::Json& jc : j["classes"]) {
        remat::detail::require_fields(jc, {"class_id", "representative", "members", "options"},
                                      {}, path);
        remat::ClassMenu c;
        c.class_id = jc["class_id"].get<int>();
        c.representative = jc["representative"].get<int>();
        for (const remat::Json& m : jc["members"]) c.members.push_back(m.get<int>());
        if (c.representative < 0 || c.representative >= chain.length())
            throw remat::ValidationError(path + ": representative out of range");
        c.options = remat::decode_options(chain.blocks[c.representative], jc["options"], path);
        for (int m : c.members) {
            if (m < 0 || m >= chain.length())
                throw remat::ValidationError(path + ": member out of range");
            class_of_block[m] = c.class_id;
        }
        out.classes.push_back(std::move(c));
    }
    out.class_solves = 0;
    out.menu.options.resize(chain.length());
    for (int i = 0; i < chain.length(); ++i) {
        if (class_of_block[i] < 0)
            throw remat::ValidationError(path + ": block " + std::to_string(i) +
                                         " has no option menu");
        out.menu.options[i] = out.classes[class_of_block[i]].options;
    }
    out.menu.act_sizes.resize(chain.length() + 1);
    for (int i = 0; i <= chain.length(); ++i) out.menu.act_sizes[i] = chain.act_size(i);
    return out;
}

struct SweepRow {
    remat::Bytes budget = 0;
    bool feasible = false;
    remat::Micros makespan = 0;
    double overhead_pct = 0.0;
    remat::Bytes peak = 0;
};

int cmd_partition(const std::string& in, const std::string& out) {
    remat::PartitionedForwardGraph p = remat::load_forward_graph(in);
    remat::SeparatorList seps = remat::find_separators(p.graph);
    std::vector<remat::ForwardGraph> blocks = remat::cut_into_blocks(p.graph, seps);
    std::vector<remat::BlockClass> classes = remat::group_identical(blocks);

    remat::PartitionedForwardGraph result;
    result.graph = p.graph;
    result.separators = seps;
    result.equiv_classes.assign(blocks.size(), -1);
    for (const remat::BlockClass& c : classes)
        for (int m : c.members) result.equiv_classes[m] = c.class_id;
    for (const remat::ForwardGraph& b : blocks) {
        std::vector<std::string> ids;
        for (const remat::ForwardNode& n : b.nodes) ids.push_back(n.id);
        result.blocks.push_back(std::move(ids));
    }
    remat::save_forward_graph(result, out);
    std::printf("blocks: %zu\nclasses: %zu\n", blocks.size(), classes.size());
    return kExitOk;
}

int cmd_solve(const std::string& chain_path, const SolveFlags& flags, const std::string& out) {
    remat::Chain chain = remat::load_chain(chain_path);
    remat::SolveSettings settings = to_settings(flags);

    remat::MenuSet menus = flags.load_options.empty()
                               ? remat::build_menus(chain, settings)
                               : read_options_file(chain, flags.load_options);
    if (!flags.save_options.empty()) write_options_file(chain, menus, flags.save_options);

    try {
        remat::ScheduledRun run =
            remat::schedule_with_menu(chain, menus.menu, settings.memory, settings.units);
        remat::Schedule flat = remat::flatten_schedule(run.schedule, chain, menus.menu);
        remat::save_schedule(flat, out);
        std::printf("class solves: %d\n", menus.class_solves);
        for (const remat::ClassMenu& c : menus.classes)
            std::printf("class %d: %zu options (%d budget pairs, %d timed out)\n", c.class_id,
                        c.options.size(), c.solved_pairs, c.timed_out_pairs);
        std::printf("makespan_us: %lld\noverhead_us: %lld\npeak_bytes: %lld\n",
                    static_cast<long long>(run.report.makespan),
                    static_cast<long long>(run.report.overhead),
                    static_cast<long long>(run.report.peak_mem));
        if (menus.timeout_pairs > 0)
            std::fprintf(stderr, "note: %d budget pairs timed out and were dropped\n",
                         menus.timeout_pairs);
        return kExitOk;
    } catch (const remat::InfeasibleBudget& e) {
        std::fprintf(stderr, "infeasible: %s\n", e.what());
        if (e.min_feasible_budget >= 0)
            std::fprintf(stderr, "minimum feasible budget: %lld bytes\n",
                         static_cast<long long>(e.min_feasible_budget));
        return menus.timeout_pairs > 0 ? kExitTimeout : kExitInfeasible;
    }
}

int cmd_simulate(const std::string& schedule_path, const std::string& chain_path,
                 remat::Bytes budget, const std::string& trace_path,
                 const std::string& options_path) {
    remat::Chain chain = remat::load_chain(chain_path);
    remat::Schedule schedule = remat::load_schedule(schedule_path);
    remat::MenuSet menus;
    remat::SimulateOptions opts;
    opts.want_trace = !trace_path.empty();
    if (!options_path.empty()) {
        menus = read_options_file(chain, options_path);
        opts.menus = &menus.menu.options;
    }
    remat::SimReport rep = remat::simulate(schedule, chain, budget, opts);
    std::printf("makespan_us: %lld\noverhead_us: %lld\npeak_bytes: %lld\nmem_at_loss: %lld\n",
                static_cast<long long>(rep.makespan), static_cast<long long>(rep.overhead),
                static_cast<long long>(rep.peak_mem), static_cast<long long>(rep.mem_at_loss));
    if (!trace_path.empty()) {
        std::ofstream csv(trace_path);
        if (!csv) throw remat::IoError("cannot open " + trace_path);
        csv << "op_index,op,elapsed_us,current_mem,peak_mem\n";
        for (const remat::SimTraceRow& row : rep.trace)
            csv << row.op_index << ',' << row.op << ',' << row.elapsed << ','
                << row.current_mem << ',' << row.peak_mem << '\n';
    }
    return kExitOk;
}

int cmd_sweep(const std::string& chain_path, const SolveFlags& flags,
              std::vector<remat::Bytes> budgets, remat::Bytes from, remat::Bytes to, int steps,
              const std::string& out) {
    remat::Chain chain = remat::load_chain(chain_path);
    remat::SolveSettings settings = to_settings(flags);
    remat::MenuSet menus = flags.load_options.empty()
                               ? remat::build_menus(chain, settings)
                               : read_options_file(chain, flags.load_options);
    if (!flags.save_options.empty()) write_options_file(chain, menus, flags.save_options);

    if (budgets.empty()) {
        if (steps < 1 || to < from)
            throw remat::ValidationError("sweep needs --budgets or a valid --from/--to/--steps");
        for (remat::Bytes b : remat::even_spacing(from, to, steps)) budgets.push_back(b);
    }
    std::sort(budgets.begin(), budgets.end());
    budgets.erase(std::unique(budgets.begin(), budgets.end()), budgets.end());

    remat::Micros one_pass = 0;
    for (const remat::CDGraph& g : chain.blocks)
        for (const remat::CNode& c : g.cnodes) one_pass += c.time;

    std::vector<SweepRow> rows;
    for (remat::Bytes budget : budgets) {
        SweepRow row;
        row.budget = budget;
        try {
            remat::ScheduledRun run =
                remat::schedule_with_menu(chain, menus.menu, budget, settings.units);
            row.feasible = true;
            row.makespan = run.report.makespan;
            row.peak = run.report.peak_mem;
            row.overhead_pct =
                100.0 * static_cast<double>(run.report.overhead) / static_cast<double>(one_pass);
        } catch (const remat::InfeasibleBudget&) {
            row.feasible = false;
        }
        rows.push_back(row);
    }
    // optimality implies the makespan curve never rises with budget
    remat::Micros prev = remat::kInfTime;
    for (const SweepRow& row : rows) {
        if (!row.feasible) continue;
        if (row.makespan > prev)
            throw std::logic_error("sweep makespan increased with budget");
        prev = row.makespan;
    }
    std::ofstream csv(out);
    if (!csv) throw remat::IoError("cannot open " + out);
    csv << "budget_bytes,makespan_us,overhead_pct,peak_bytes,status\n";
    char buf[64];
    for (const SweepRow& row : rows) {
        if (row.feasible) {
            std::snprintf(buf, sizeof buf, "%.4f", row.overhead_pct);
            csv << row.budget << ',' << row.makespan << ',' << buf << ',' << row.peak
                << ",ok\n";
        } else {
            csv << row.budget << ",,,,infeasible\n";
        }
    }
    std::printf("%zu budgets swept, %zu feasible\n", rows.size(),
                static_cast<size_t>(std::count_if(rows.begin(), rows.end(),
                                                  [](const SweepRow& r) { return r.feasible; })));
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"re-materialization scheduler for measured computation chains"};
    app.require_subcommand(1);

    std::string in_path, chain_path, schedule_path, out_path, trace_path, options_path;
    SolveFlags flags;
    std::vector<remat::Bytes> budgets;
    remat::Bytes budget = -1, from = 0, to = 0;
    int steps = 0;

    CLI::App* partition = app.add_subcommand("partition", "cut a forward graph into blocks");
    partition->add_option("graph", in_path, "forward graph file")->required();
    partition->add_option("-o,--out", out_path, "output file")->required();

    CLI::App* solve = app.add_subcommand("solve", "schedule a chain within a memory budget");
    solve->add_option("chain", chain_path, "chain file")->required();
    add_solve_flags(solve, flags, true);
    solve->add_option("-o,--out", out_path, "schedule output file")->required();

    CLI::App* simulate = app.add_subcommand("simulate", "replay a schedule against a chain");
    simulate->add_option("schedule", schedule_path, "schedule file")->required();
    simulate->add_option("chain", chain_path, "chain file")->required();
    simulate->add_option("--budget", budget, "budget to enforce in bytes");
    simulate->add_option("--trace", trace_path, "write a per-op CSV trace");
    simulate->add_option("--options", options_path,
                         "option menus for schedules with block-level ops");

    CLI::App* sweep = app.add_subcommand("sweep", "solve across budgets and emit a CSV");
    sweep->add_option("chain", chain_path, "chain file")->required();
    add_solve_flags(sweep, flags, false);
    sweep->add_option("--budgets", budgets, "explicit budget list in bytes")->delimiter(',');
    sweep->add_option("--from", from, "sweep start in bytes");
    sweep->add_option("--to", to, "sweep end in bytes");
    sweep->add_option("--steps", steps, "number of sweep points");
    sweep->add_option("-o,--out", out_path, "CSV output file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (partition->parsed()) return cmd_partition(in_path, out_path);
        if (solve->parsed()) return cmd_solve(chain_path, flags, out_path);
        if (simulate->parsed())
            return cmd_simulate(schedule_path, chain_path, budget, trace_path, options_path);
        if (sweep->parsed())
            return cmd_sweep(chain_path, flags, budgets, from, to, steps, out_path);
    } catch (const remat::ParseError& e) {
        std::fprintf(stderr, "parse error: %s\n", e.what());
        return kExitInput;
    } catch (const remat::ValidationError& e) {
        std::fprintf(stderr, "invalid input: %s\n", e.what());
        return kExitInput;
    } catch (const remat::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kExitInput;
    } catch (const remat::BudgetExceeded& e) {
        std::fprintf(stderr, "budget exceeded: %s\n", e.what());
        return kExitInfeasible;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return kExitOk;
}
