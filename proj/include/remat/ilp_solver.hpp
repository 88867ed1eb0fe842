#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "remat/errors.hpp"
#include "remat/ilp_model.hpp"
#include "remat/types.hpp"

namespace remat {

enum class SolveStatus { Optimal, Infeasible, TimedOut };

struct SolveResult {
    SolveStatus status = SolveStatus::Infeasible;
    Micros objective = 0;
    std::vector<signed char> assignment;  // empty when no incumbent exists
    std::int64_t nodes_explored = 0;
    double wall_seconds = 0.0;
};

// ---------------------------------------------------------------------------
// Exact depth-first branch and bound over the binary variables, with bound
// propagation on every row. Deterministic: static branching order, fixed
// value order, first-found incumbent kept among ties.
// ---------------------------------------------------------------------------

class BnbSolver {
public:
    explicit BnbSolver(const IlpModel& model) : m_(model) {
        const int n = m_.var_count();
        values_.assign(n, -1);
        var_level_.assign(n, 0);
        occ_.assign(n, {});
        row_lo_.assign(m_.rows.size(), 0);
        row_hi_.assign(m_.rows.size(), 0);
        row_max_coef_.assign(m_.rows.size(), 0);
        for (int r = 0; r < static_cast<int>(m_.rows.size()); ++r) {
            for (auto [v, c] : m_.rows[r].terms) {
                occ_[v].emplace_back(r, c);
                if (c < 0)
                    row_lo_[r] += c;
                else
                    row_hi_[r] += c;
                row_max_coef_[r] = std::max(row_max_coef_[r], c < 0 ? -c : c);
            }
        }
        // stage grouping for the dominance memo: once every variable of a
        // stage is decided, the remaining subproblem depends only on the
        // carried residency (P) and savedness (S) of the next stage
        stage_of_var_.assign(n, 0);
        key_vars_.assign(m_.T, {});
        for (int v = 0; v < n; ++v) {
            const auto& vi = m_.vars[v];
            int group = 0;
            switch (vi.type) {
                case IlpModel::VarType::R: group = vi.t; break;
                case IlpModel::VarType::P: group = std::min(vi.t - 1, m_.T - 1); break;
                case IlpModel::VarType::S: group = vi.t - 1; break;
                case IlpModel::VarType::Create:
                case IlpModel::VarType::Delete: group = vi.t; break;
            }
            stage_of_var_[v] = group;
            if ((vi.type == IlpModel::VarType::P || vi.type == IlpModel::VarType::S) &&
                vi.t >= 1 && vi.t <= m_.T - 1)
                key_vars_[vi.t - 1].push_back(v);
        }
        memo_.resize(m_.T);
    }

    SolveResult solve(double time_limit_seconds,
                      const std::vector<signed char>* warm_start = nullptr,
                      std::optional<Micros> warm_objective = {}) {
        const auto t0 = std::chrono::steady_clock::now();
        SolveResult res;
        if (warm_start && warm_objective) {
            best_ = *warm_objective;
            best_assignment_ = *warm_start;
            have_incumbent_ = true;
        }

        for (int r = 0; r < static_cast<int>(m_.rows.size()); ++r) dirty_.push_back(r);
        int conflict = propagate();
        bool root_failed = conflict >= 0;

        struct Frame {
            int var = -1;
            signed char first = 0;
            int tried = 0;
            size_t trail_mark = 0;
            int cursor = 0;
        };
        std::vector<Frame> stack;
        bool timed_out = false;

        // assign preferred values until a leaf, a bound prune or a conflict;
        // returns the conflicting row or -1
        auto dive = [&]() -> int {
            while (true) {
                if (have_incumbent_ && fixed_cost_ >= best_) return -1;
                int v = pick_var();
                if (v < 0) {
                    if (!have_incumbent_ || fixed_cost_ < best_) {
                        best_ = fixed_cost_;
                        best_assignment_.assign(values_.begin(), values_.end());
                        have_incumbent_ = true;
                    }
                    return -1;
                }
                Frame f;
                f.var = v;
                f.first = preferred_value(v);
                f.trail_mark = trail_.size();
                f.cursor = cursor_;
                f.tried = 1;
                stack.push_back(f);
                level_ = static_cast<int>(stack.size());
                ++nodes_;
                assign(v, f.first);
                int c = propagate();
                if (c >= 0) return c;
            }
        };

        if (!root_failed) conflict = dive();
        while (!stack.empty() && !root_failed) {
            if ((++ticks_ & 1023) == 0) {
                double secs =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                if (secs > time_limit_seconds) {
                    timed_out = true;
                    break;
                }
            }
            // a conflict depends only on the decisions its row's variables
            // were assigned under; jump straight to the deepest of them
            if (conflict >= 0) {
                int jump = 0;
                for (auto [v, c] : m_.rows[conflict].terms)
                    if (values_[v] >= 0) jump = std::max(jump, var_level_[v]);
                if (jump == 0) break;  // implied before any decision
                while (static_cast<int>(stack.size()) > jump) {
                    undo_to(stack.back().trail_mark);
                    cursor_ = stack.back().cursor;
                    stack.pop_back();
                }
            }
            conflict = -1;
            Frame f = stack.back();
            stack.pop_back();
            undo_to(f.trail_mark);
            cursor_ = f.cursor;
            if (f.tried >= 2) continue;
            f.tried = 2;
            stack.push_back(f);
            level_ = static_cast<int>(stack.size());
            ++nodes_;
            assign(f.var, static_cast<signed char>(1 - f.first));
            conflict = propagate();
            if (conflict < 0) conflict = dive();
        }

        if (timed_out) {
            res.status = SolveStatus::TimedOut;
            if (have_incumbent_) {
                res.objective = best_;
                res.assignment = best_assignment_;
            }
        } else if (have_incumbent_) {
            res.status = SolveStatus::Optimal;
            res.objective = best_;
            res.assignment = best_assignment_;
        } else {
            res.status = SolveStatus::Infeasible;
        }
        res.nodes_explored = nodes_;
        res.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return res;
    }

private:
    signed char preferred_value(int v) const {
        switch (m_.vars[v].type) {
            case IlpModel::VarType::R: return 0;
            case IlpModel::VarType::Delete: return 0;
            default: return 1;
        }
    }

    int pick_var() {
        while (cursor_ < static_cast<int>(values_.size()) && values_[cursor_] >= 0) ++cursor_;
        return cursor_ < static_cast<int>(values_.size()) ? cursor_ : -1;
    }

    void assign(int v, signed char val) {
        values_[v] = val;
        var_level_[v] = level_;
        trail_.push_back(v);
        fixed_cost_ += val ? m_.objective[v] : 0;
        for (auto [r, c] : occ_[v]) {
            if (c < 0)
                row_lo_[r] -= c;
            else
                row_hi_[r] -= c;
            if (val) {
                row_lo_[r] += c;
                row_hi_[r] += c;
            }
            dirty_.push_back(r);
        }
    }

    void undo_to(size_t mark) {
        while (trail_.size() > mark) {
            int v = trail_.back();
            trail_.pop_back();
            signed char val = values_[v];
            values_[v] = -1;
            fixed_cost_ -= val ? m_.objective[v] : 0;
            for (auto [r, c] : occ_[v]) {
                if (val) {
                    row_lo_[r] -= c;
                    row_hi_[r] -= c;
                }
                if (c < 0)
                    row_lo_[r] += c;
                else
                    row_hi_[r] += c;
            }
        }
        dirty_.clear();
    }

    // bound propagation to a fixpoint; returns the conflicting row or -1
    int propagate() {
        while (!dirty_.empty()) {
            int r = dirty_.back();
            dirty_.pop_back();
            const IlpModel::Row& row = m_.rows[r];
            const Bytes lo = row_lo_[r];
            const Bytes hi = row_hi_[r];
            if (row.sense != '>' && lo > row.rhs) {
                dirty_.clear();
                return r;
            }
            if (row.sense != '<' && hi < row.rhs) {
                dirty_.clear();
                return r;
            }
            // no term can force anything while the slack exceeds every
            // remaining coefficient; skip the scan
            bool le_tight = row.sense != '>' && lo + row_max_coef_[r] > row.rhs;
            bool ge_tight = row.sense != '<' && hi - row_max_coef_[r] < row.rhs;
            if (!le_tight && !ge_tight) continue;
            for (auto [v, c] : row.terms) {
                if (values_[v] >= 0) continue;
                if (le_tight) {
                    if (c > 0 && lo + c > row.rhs) {
                        assign(v, 0);
                        continue;
                    }
                    if (c < 0 && lo - c > row.rhs) {
                        assign(v, 1);
                        continue;
                    }
                }
                if (ge_tight) {
                    if (c > 0 && hi - c < row.rhs) {
                        assign(v, 1);
                        continue;
                    }
                    if (c < 0 && hi + c < row.rhs) {
                        assign(v, 0);
                        continue;
                    }
                }
            }
        }
        return -1;
    }

    const IlpModel& m_;
    std::vector<signed char> values_;
    std::vector<int> var_level_;
    std::vector<std::vector<std::pair<int, Bytes>>> occ_;
    std::vector<Bytes> row_lo_, row_hi_, row_max_coef_;
    std::vector<int> trail_;
    std::vector<int> dirty_;
    int cursor_ = 0;
    int level_ = 0;
    Micros fixed_cost_ = 0;
    Micros best_ = 0;
    std::vector<signed char> best_assignment_;
    bool have_incumbent_ = false;
    std::int64_t nodes_ = 0;
    std::int64_t ticks_ = 0;
};

// Re-check an assignment against every row; an Optimal result must satisfy the
// model exactly.
inline bool assignment_satisfies(const IlpModel& m, const std::vector<signed char>& x) {
    for (const auto& row : m.rows) {
        Bytes lhs = 0;
        for (auto [v, c] : row.terms) lhs += x[v] ? c : 0;
        bool ok = row.sense == '<'   ? lhs <= row.rhs
                  : row.sense == '>' ? lhs >= row.rhs
                                     : lhs == row.rhs;
        if (!ok) return false;
    }
    return true;
}

inline SolveResult solve(const IlpModel& m, double time_limit_seconds = 120.0,
                         const std::vector<signed char>* warm = nullptr,
                         std::optional<Micros> warm_objective = {}) {
    BnbSolver solver(m);
    SolveResult res = solver.solve(time_limit_seconds, warm, warm_objective);
    if (res.status == SolveStatus::Optimal && !assignment_satisfies(m, res.assignment))
        throw SolutionInfeasible("solver returned an assignment violating the model");
    return res;
}

// ---------------------------------------------------------------------------
// Independent oracle: a direct dynamic program over the stage semantics. A
// stage ends at the first execution of its node; within a stage we choose the
// set of re-executed earlier nodes and the set of tensors kept into the next
// stage; deletions follow the eager rule (a tensor is freed at its last
// active event once nothing later in the stage needs it and it is not kept).
// ---------------------------------------------------------------------------

struct OracleOutcome {
    bool feasible = false;
    Micros overhead = 0;  // recomputation cost above the one-pass time
    Schedule witness;     // block-local schedule achieving it
};

inline OracleOutcome brute_force_block(const CDGraph& g, const BudgetPair& budget,
                                       int recompute_cap = 3,
                                       std::size_t state_cap = 2'000'000) {
    const int T = static_cast<int>(g.cnodes.size());
    const int D = static_cast<int>(g.dnodes.size());
    if (T > 20 || D > 20) throw SearchExploded("oracle is meant for small blocks");
    const EdgeSets es = derive_edge_sets(g);
    std::vector<char> is_sink(D, 0);
    for (int d : g.sink_dnodes()) is_sink[d] = 1;
    const int d_in = g.input_data;
    const int loss = g.loss_index;

    // State at a stage boundary: per dnode 0 = absent, else 1 + claim mask
    // over its parents (claim p: saved w.r.t. parent p); then per cnode the
    // number of executions so far.
    using State = std::vector<std::uint8_t>;
    struct StateHash {
        std::size_t operator()(const State& s) const {
            std::size_t h = 1469598103934665603ull;
            for (std::uint8_t b : s) h = (h ^ b) * 1099511628211ull;
            return h;
        }
    };
    struct Entry {
        Micros cost = 0;
        State prev;
        std::uint32_t runs = 0;
    };
    using Layer = std::unordered_map<State, Entry, StateHash>;

    auto resident = [&](const State& s, int d) { return d == d_in || s[d] != 0; };
    auto claim_mask = [&](const State& s, int d) -> std::uint32_t {
        return s[d] ? static_cast<std::uint32_t>(s[d] - 1) : 0;
    };

    // Walk one stage under a run set and a keep rule; false when a memory
    // bound breaks. Appends the compute/forget sequence when ops is given.
    auto walk_stage = [&](int t, const State& start, std::uint32_t runs,
                          const std::function<bool(int)>& keep, std::vector<char>& alive_out,
                          std::vector<ScheduleOp>* ops) -> bool {
        std::vector<char> alive(D, 0);
        Bytes current = g.dnodes[d_in].size;
        for (int d = 0; d < D; ++d)
            if (d != d_in && resident(start, d)) {
                alive[d] = 1;
                current += g.dnodes[d].size;
            }
        for (int k = 0; k <= t; ++k) {
            if (!(runs & (1u << k))) continue;
            for (int d : g.cnodes[k].outputs)
                if (!alive[d] && d != d_in) {
                    alive[d] = 1;
                    current += g.dnodes[d].size;
                }
            if (current + g.cnodes[k].tmp_mem > budget.m_peak) return false;
            if (ops) ops->push_back(ScheduleOp::compute(0, g.cnodes[k].id));
            for (int d = 0; d < D; ++d) {
                if (d == d_in || is_sink[d] || !alive[d]) continue;
                bool event_here = false;
                for (int p : g.dnodes[d].parents) event_here |= p == k;
                for (int c : es.children_of_data[d]) event_here |= c == k;
                if (!event_here) continue;
                bool later_child_runs = false;
                for (int c : es.children_of_data[d])
                    if (c > k && c <= t && (runs & (1u << c))) later_child_runs = true;
                if (!later_child_runs && !keep(d)) {
                    alive[d] = 0;
                    current -= g.dnodes[d].size;
                    if (ops) ops->push_back(ScheduleOp::forget(0, g.dnodes[d].id));
                }
            }
        }
        if (t == loss && current > budget.m_save) return false;
        alive_out = std::move(alive);
        return true;
    };

    State init(static_cast<size_t>(D + T), 0);
    Layer layer;
    layer.emplace(init, Entry{});
    std::size_t states_seen = 1;
    std::vector<Layer> history;
    history.push_back(layer);

    for (int t = 0; t < T; ++t) {
        Layer next;
        for (const auto& [state, entry] : layer) {
            if (state[D + t] >= recompute_cap) continue;  // the diagonal must run
            std::vector<int> cands;
            for (int k = 0; k < t; ++k)
                if (k != loss && state[D + k] < recompute_cap) cands.push_back(k);
            const std::uint32_t limit = 1u << cands.size();
            for (std::uint32_t sel = 0; sel < limit; ++sel) {
                std::uint32_t runs = 1u << t;
                Micros stage_cost = 0;
                for (std::size_t i = 0; i < cands.size(); ++i)
                    if (sel & (1u << i)) {
                        runs |= 1u << cands[i];
                        stage_cost += g.cnodes[cands[i]].time;
                    }

                // per-edge availability for every run: each parent either
                // re-runs this stage or is claimable as saved
                bool avail_ok = true;
                for (int k = 0; k <= t && avail_ok; ++k) {
                    if (!(runs & (1u << k))) continue;
                    for (int d : g.cnodes[k].deps) {
                        if (d == d_in) continue;
                        const auto& ps = g.dnodes[d].parents;
                        for (std::size_t pi = 0; pi < ps.size() && avail_ok; ++pi) {
                            bool parent_runs = (runs & (1u << ps[pi])) != 0;
                            bool claimed = (claim_mask(state, d) & (1u << pi)) != 0;
                            if (!parent_runs && !claimed) avail_ok = false;
                        }
                        if (!avail_ok) break;
                    }
                }
                if (!avail_ok) continue;

                // tensors whose fate is decidable this stage
                std::vector<int> active;
                for (int d = 0; d < D; ++d) {
                    if (d == d_in || is_sink[d]) continue;
                    bool any = false;
                    for (int p : g.dnodes[d].parents) any = any || (runs & (1u << p));
                    for (int c : es.children_of_data[d]) any = any || (runs & (1u << c));
                    if (any) active.push_back(d);
                }

                const std::uint32_t keep_limit = 1u << active.size();
                for (std::uint32_t ksel = 0; ksel < keep_limit; ++ksel) {
                    std::vector<signed char> keep_choice(D, -1);
                    for (std::size_t i = 0; i < active.size(); ++i)
                        keep_choice[active[i]] = (ksel & (1u << i)) ? 1 : 0;
                    // the block output is pinned across the loss boundary
                    if (t == loss && keep_choice[g.output_data] == 0) continue;

                    auto keep = [&](int d) {
                        if (keep_choice[d] >= 0) return keep_choice[d] == 1;
                        return resident(state, d);  // frozen without an event
                    };
                    std::vector<char> alive;
                    if (!walk_stage(t, state, runs, keep, alive, nullptr)) continue;

                    // keep choices must be realized; after the last stage only
                    // the input, the deliverable sinks and the block output
                    // (freed by the chain) may remain
                    bool consistent = true;
                    for (int d = 0; d < D && consistent; ++d) {
                        if (d == d_in || is_sink[d]) continue;
                        if (keep_choice[d] == 1 && !alive[d]) consistent = false;
                        if (t == T - 1 && alive[d] && d != g.output_data) consistent = false;
                    }
                    if (!consistent) continue;

                    State ns(static_cast<size_t>(D + T), 0);
                    for (int d = 0; d < D; ++d) {
                        if (d == d_in || !alive[d]) continue;
                        std::uint32_t mask = claim_mask(state, d);
                        const auto& ps = g.dnodes[d].parents;
                        for (std::size_t pi = 0; pi < ps.size(); ++pi)
                            if (runs & (1u << ps[pi])) mask |= 1u << pi;
                        ns[d] = static_cast<std::uint8_t>(1 + mask);
                    }
                    for (int k = 0; k < T; ++k) ns[D + k] = state[D + k];
                    for (int k = 0; k <= t; ++k)
                        if (runs & (1u << k)) ns[D + k] += 1;

                    Micros cost = entry.cost + stage_cost;
                    auto it = next.find(ns);
                    if (it == next.end()) {
                        next.emplace(std::move(ns), Entry{cost, state, runs});
                        if (++states_seen > state_cap)
                            throw SearchExploded("oracle state cap exceeded");
                    } else if (cost < it->second.cost) {
                        it->second = Entry{cost, state, runs};
                    }
                }
            }
        }
        layer = std::move(next);
        history.push_back(layer);
        if (layer.empty()) break;
    }

    OracleOutcome out;
    if (layer.empty()) return out;
    const State* best_state = nullptr;
    Micros best_cost = std::numeric_limits<Micros>::max();
    for (const auto& [state, entry] : layer)
        if (entry.cost < best_cost ||
            (entry.cost == best_cost && best_state && state < *best_state)) {
            best_cost = entry.cost;
            best_state = &state;
        }
    out.feasible = true;
    out.overhead = best_cost;

    // walk back through the layers, then replay forward emitting ops
    std::vector<State> before_state(T);
    std::vector<State> after_state(T);
    std::vector<std::uint32_t> stage_runs(T);
    State cur = *best_state;
    for (int t = T - 1; t >= 0; --t) {
        const Entry& e = history[t + 1].at(cur);
        after_state[t] = cur;
        before_state[t] = e.prev;
        stage_runs[t] = e.runs;
        cur = e.prev;
    }
    for (int t = 0; t < T; ++t) {
        auto keep = [&](int d) { return after_state[t][d] != 0; };
        std::vector<char> alive;
        walk_stage(t, before_state[t], stage_runs[t], keep, alive, &out.witness.ops);
    }
    return out;
}

}  // namespace remat
