#pragma once

#include <atomic>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "remat/chain_dp.hpp"
#include "remat/errors.hpp"
#include "remat/ilp_model.hpp"
#include "remat/ilp_solver.hpp"
#include "remat/options.hpp"
#include "remat/partition.hpp"
#include "remat/simulate.hpp"
#include "remat/types.hpp"

namespace remat {

struct SolveSettings {
    Bytes memory = 0;
    int n_peak = 20;
    int n_save = 20;
    int units = 500;
    double time_limit_seconds = 120.0;
    int threads = 0;  // 0: hardware concurrency
    bool use_classes = true;
};

struct ClassMenu {
    int class_id = 0;
    int representative = 0;
    std::vector<int> members;
    std::vector<BlockOption> options;
    int timed_out_pairs = 0;
    int solved_pairs = 0;
};

struct PipelineResult {
    Schedule schedule;
    SimReport report;
    OptionMenu menu;
    std::vector<ClassMenu> classes;
    Micros opt_time = 0;
    int class_solves = 0;
    int timeout_pairs = 0;
};

// Solve every budget pair of one block class and assemble its option menu.
//
// The grid forms a lattice: a schedule feasible under tighter budgets stays
// feasible under looser ones, and the optimum is monotone. The loosest pair
// anchors a global lower bound; the rest are solved tightest-first so every
// later pair can reuse a tighter solution as an incumbent or skip its solve
// when the bounds already meet.
inline ClassMenu solve_block_class(const CDGraph& g, int n_peak, int n_save,
                                   double time_limit_seconds, int /*threads*/ = 0) {
    ClassMenu out;
    BudgetGrid grid = budget_grid(g, n_peak, n_save);
    std::sort(grid.pairs.begin(), grid.pairs.end(),
              [](const BudgetPair& a, const BudgetPair& b) {
                  if (a.m_peak != b.m_peak) return a.m_peak < b.m_peak;
                  return a.m_save < b.m_save;
              });
    grid.pairs.erase(std::unique(grid.pairs.begin(), grid.pairs.end(),
                                 [](const BudgetPair& a, const BudgetPair& b) {
                                     return a.m_peak == b.m_peak && a.m_save == b.m_save;
                                 }),
                     grid.pairs.end());
    // the loosest pair first, then ascending
    std::rotate(grid.pairs.begin(), grid.pairs.end() - 1, grid.pairs.end());

    struct Solved {
        BudgetPair pair;
        bool feasible = false;
        Micros objective = 0;
        std::vector<signed char> assignment;
    };
    std::vector<Solved> solved;
    std::vector<std::pair<BudgetPair, std::vector<signed char>>> answers;

    for (const BudgetPair& pair : grid.pairs) {
        // bounds from the lattice
        const Solved* upper = nullptr;
        Micros lower = -1;
        bool known_infeasible = false;
        for (const Solved& s : solved) {
            bool tighter = s.pair.m_peak <= pair.m_peak && s.pair.m_save <= pair.m_save;
            bool looser = s.pair.m_peak >= pair.m_peak && s.pair.m_save >= pair.m_save;
            if (tighter && s.feasible && (!upper || s.objective < upper->objective)) upper = &s;
            if (looser && s.feasible) lower = std::max(lower, s.objective);
            if (looser && !s.feasible) known_infeasible = true;
        }
        Solved rec;
        rec.pair = pair;
        if (known_infeasible) {
            solved.push_back(std::move(rec));
            continue;
        }
        if (upper && lower >= 0 && upper->objective == lower) {
            rec.feasible = true;
            rec.objective = upper->objective;
            rec.assignment = upper->assignment;
        } else {
            IlpModel model = build_model(g, pair);
            SolveResult res =
                upper ? solve(model, time_limit_seconds, &upper->assignment, upper->objective)
                      : solve(model, time_limit_seconds);
            if (res.status == SolveStatus::TimedOut) {
                ++out.timed_out_pairs;
                solved.push_back(std::move(rec));
                continue;
            }
            if (res.status == SolveStatus::Optimal) {
                rec.feasible = true;
                rec.objective = res.objective;
                rec.assignment = std::move(res.assignment);
            }
        }
        if (rec.feasible) answers.emplace_back(pair, rec.assignment);
        solved.push_back(std::move(rec));
    }

    std::vector<BlockOption> opts;
    opts.push_back(option_zero(g));
    for (auto& [pair, assignment] : answers) {
        IlpModel model = build_model(g, pair);
        opts.push_back(extract_option(g, model, assignment, 1));
    }
    out.options = dedup_options(std::move(opts));
    out.solved_pairs = static_cast<int>(grid.pairs.size());
    return out;
}

struct MenuSet {
    OptionMenu menu;
    std::vector<ClassMenu> classes;
    int class_solves = 0;
    int timeout_pairs = 0;
};

// Solve each distinct block class once and broadcast the menus to members.
inline MenuSet build_menus(const Chain& chain, const SolveSettings& settings) {
    MenuSet out;
    std::vector<int> cls = settings.use_classes ? chain.equiv_class : std::vector<int>{};
    if (cls.empty()) {
        cls.resize(chain.length());
        for (int i = 0; i < chain.length(); ++i) cls[i] = i;
    }
    verify_equiv_classes(chain);

    std::vector<int> reps;
    std::vector<int> class_of_block(chain.length(), -1);
    for (int i = 0; i < chain.length(); ++i) {
        int found = -1;
        for (size_t r = 0; r < reps.size(); ++r)
            if (cls[reps[r]] == cls[i]) found = static_cast<int>(r);
        if (found < 0) {
            found = static_cast<int>(reps.size());
            reps.push_back(i);
        }
        class_of_block[i] = found;
    }

    for (size_t r = 0; r < reps.size(); ++r) {
        ClassMenu menu = solve_block_class(chain.blocks[reps[r]], settings.n_peak,
                                           settings.n_save, settings.time_limit_seconds,
                                           settings.threads);
        menu.class_id = static_cast<int>(r);
        menu.representative = reps[r];
        for (int i = 0; i < chain.length(); ++i)
            if (class_of_block[i] == static_cast<int>(r)) menu.members.push_back(i);
        out.timeout_pairs += menu.timed_out_pairs;
        out.classes.push_back(std::move(menu));
    }
    out.class_solves = static_cast<int>(reps.size());

    out.menu.options.resize(chain.length());
    for (int i = 0; i < chain.length(); ++i)
        out.menu.options[i] = out.classes[class_of_block[i]].options;
    out.menu.act_sizes.resize(chain.length() + 1);
    for (int i = 0; i <= chain.length(); ++i) out.menu.act_sizes[i] = chain.act_size(i);
    return out;
}

struct ScheduledRun {
    Schedule schedule;
    SimReport report;
    Micros opt_time = 0;
};

// DP + reconstruction + the simulation gate for one budget.
inline ScheduledRun schedule_with_menu(const Chain& chain, const OptionMenu& menu,
                                       Bytes memory, int units) {
    ScheduledRun run;
    ChainSolution sol = solve_chain(chain, menu, memory, units);
    run.opt_time = sol.opt_time;
    run.schedule = std::move(sol.schedule);
    SimulateOptions sim_opts;
    sim_opts.menus = &menu.options;
    run.report = simulate(run.schedule, chain, memory, sim_opts);
    run.schedule.meta = ScheduleMeta{memory, run.report.makespan, run.report.peak_mem};
    return run;
}

inline PipelineResult solve_pipeline(const Chain& chain, const SolveSettings& settings) {
    PipelineResult result;
    MenuSet menus = build_menus(chain, settings);
    result.menu = std::move(menus.menu);
    result.classes = std::move(menus.classes);
    result.class_solves = menus.class_solves;
    result.timeout_pairs = menus.timeout_pairs;

    ScheduledRun run = schedule_with_menu(chain, result.menu, settings.memory, settings.units);
    result.schedule = std::move(run.schedule);
    result.report = run.report;
    result.opt_time = run.opt_time;
    return result;
}

// Expand block-level ops into their compute/forget fragments so a schedule
// file stands alone.
inline Schedule flatten_schedule(const Schedule& s, const Chain& chain,
                                 const OptionMenu& menu) {
    Schedule flat;
    flat.meta = s.meta;
    for (const ScheduleOp& op : s.ops) {
        if (op.kind == ScheduleOp::Compute || op.kind == ScheduleOp::Forget) {
            flat.ops.push_back(op);
            continue;
        }
        const CDGraph& g = chain.blocks[op.block];
        const BlockOption* found = nullptr;
        for (const BlockOption& o : menu.options[op.block])
            if (o.option_id == op.option) found = &o;
        if (!found) throw ValidationError("schedule references a missing option");
        const auto& ops = op.kind == ScheduleOp::BlockFwd ? found->fwd_ops : found->bwd_ops;
        for (const BlockLocalOp& lo : ops) {
            if (lo.kind == BlockLocalOp::Compute)
                flat.ops.push_back(ScheduleOp::compute(op.block, g.cnodes[lo.node].id));
            else
                flat.ops.push_back(ScheduleOp::forget(op.block, g.dnodes[lo.node].id));
        }
    }
    return flat;
}

// The chain-level peak of the plain one-pass schedule picking each block's
// fastest saved option; serves as the "no recomputation" budget ceiling.
inline Bytes chain_max_peak(const Chain& chain, const OptionMenu& menu,
                            std::vector<int>* chosen = nullptr) {
    const int L = chain.length();
    Schedule s;
    std::vector<int> pick(L, -1);
    for (int i = 0; i < L; ++i) {
        Micros best = kInfTime;
        for (const BlockOption& o : menu.options[i])
            if (o.has_bwd() && o.total_time() < best) {
                best = o.total_time();
                pick[i] = o.option_id;
            }
        if (pick[i] < 0) throw ValidationError("block without a saved option");
        s.ops.push_back(ScheduleOp::block_fwd(i, pick[i]));
    }
    const CDGraph& last = chain.blocks[L - 1];
    s.ops.push_back(ScheduleOp::compute(L - 1, last.cnodes[last.loss_index].id));
    for (int i = L - 1; i >= 0; --i) s.ops.push_back(ScheduleOp::block_bwd(i, pick[i]));
    SimulateOptions opts;
    opts.menus = &menu.options;
    Bytes peak = simulate(s, chain, -1, opts).peak_mem;
    if (chosen) *chosen = pick;
    return peak;
}

}  // namespace remat
