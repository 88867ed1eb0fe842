#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "remat/errors.hpp"
#include "remat/simulate.hpp"
#include "remat/types.hpp"

namespace remat {

struct BudgetPair {
    Bytes m_peak = 0;
    Bytes m_save = 0;
};

// 0/1 integer linear program over stage/step execution structure.
//
// Stage t (t = 0..T-1) runs from the first execution of w_{t-1} to the first
// execution of w_t; within stage t, step t' (t' <= t) may re-run w_{t'} and
// fire deletions. Variables:
//   R[t][t']          w_{t'} runs at step t' of stage t (diagonal fixed to 1)
//   S[t][(p,d)]       output d of producer p is saved into stage t
//   P[t][d]           d is resident at the start of stage t
//   create[t][d][p]   d materializes at step p of stage t
//   delete[t][d][k]   d is freed at step k of stage t
// plus the feasibility/memory rows described alongside their emission below.
struct IlpModel {
    enum class VarType { R, S, P, Create, Delete };
    struct VarInfo {
        VarType type;
        int t = -1;       // stage
        int a = -1;       // step / dnode, depending on type
        int b = -1;       // producer / event step
    };
    struct Row {
        std::vector<std::pair<int, Bytes>> terms;  // (var, coefficient)
        char sense = '<';                          // '<', '>', '='
        Bytes rhs = 0;
        const char* tag = "";
    };

    int T = 0;
    int D = 0;
    int num_edges_td = 0;  // |ChildrenOfComp|
    BudgetPair budget;

    std::vector<VarInfo> vars;
    std::vector<Row> rows;
    std::vector<Micros> objective;  // per var, nonnegative

    // index maps (-1: absent, treated as the stated constant)
    std::vector<std::vector<int>> r_var;                    // [t][t']
    std::vector<std::vector<int>> p_var;                    // [t][d]
    std::vector<std::vector<int>> s_var;                    // [t][edge]
    std::vector<std::vector<std::vector<int>>> create_var;  // [t][d][parent slot]
    std::vector<std::vector<std::vector<int>>> delete_var;  // [t][d][event slot]

    // fixed structure shared with extraction
    std::vector<std::vector<int>> events;   // per d: sorted parent+child steps
    std::vector<char> r_const_one;          // diag marker, per (t==t')
    int loss = -1;
    int input_data = -1;

    int var_count() const { return static_cast<int>(vars.size()); }
};

namespace detail {

inline constexpr int kDefaultVarCap = 200000;

}  // namespace detail

inline IlpModel build_model(const CDGraph& g, const BudgetPair& budget,
                            int var_cap = detail::kDefaultVarCap) {
    if (budget.m_save > budget.m_peak)
        throw ValidationError("budget pair has m_save > m_peak");
    if (budget.m_save < g.output_size())
        throw ValidationError("budget pair has m_save below the output size");
    if (g.cnodes.empty()) throw ValidationError("empty graph");

    const int T = static_cast<int>(g.cnodes.size());
    const int D = static_cast<int>(g.dnodes.size());
    const EdgeSets es = derive_edge_sets(g);

    IlpModel m;
    m.T = T;
    m.D = D;
    m.budget = budget;
    m.loss = g.loss_index;
    m.input_data = g.input_data;
    m.num_edges_td = static_cast<int>(es.children_of_comp.size());

    const std::vector<int> sinks = g.sink_dnodes();
    auto is_sink = [&](int d) {
        return std::find(sinks.begin(), sinks.end(), d) != sinks.end();
    };
    auto is_input = [&](int d) { return d == g.input_data; };

    m.events.assign(D, {});
    for (int d = 0; d < D; ++d) {
        std::vector<int> ev = g.dnodes[d].parents;
        ev.insert(ev.end(), es.children_of_data[d].begin(), es.children_of_data[d].end());
        std::sort(ev.begin(), ev.end());
        ev.erase(std::unique(ev.begin(), ev.end()), ev.end());
        m.events[d] = std::move(ev);
    }
    std::vector<int> min_parent(D, T);
    for (int d = 0; d < D; ++d)
        for (int p : g.dnodes[d].parents) min_parent[d] = std::min(min_parent[d], p);

    auto add_var = [&](IlpModel::VarType ty, int t, int a, int b) {
        m.vars.push_back({ty, t, a, b});
        m.objective.push_back(0);
        if (m.var_count() > var_cap)
            throw ModelTooLarge("model exceeds the variable cap of " + std::to_string(var_cap));
        return m.var_count() - 1;
    };

    // --- variables, created stage by stage so the solver's static branching
    // order decides one stage's schedule before touching the next ---
    m.r_var.assign(T, std::vector<int>(T, -1));
    m.p_var.assign(T, std::vector<int>(D, -1));
    m.s_var.assign(T, std::vector<int>(m.num_edges_td, -1));
    m.create_var.assign(T, {});
    m.delete_var.assign(T, {});
    for (int t = 0; t < T; ++t) {
        m.create_var[t].assign(D, {});
        m.delete_var[t].assign(D, {});
    }
    for (int t = 0; t < T; ++t) {
        for (int k = 0; k < t; ++k) {
            if (k == g.loss_index) continue;  // the loss runs exactly once, at its own stage
            m.r_var[t][k] = add_var(IlpModel::VarType::R, t, k, -1);
            m.objective[m.r_var[t][k]] = g.cnodes[k].time;
        }
        if (t + 1 < T)
            for (int d = 0; d < D; ++d) {
                if (is_input(d)) continue;               // always resident
                if (t + 1 <= min_parent[d]) continue;    // cannot exist yet
                m.p_var[t + 1][d] = add_var(IlpModel::VarType::P, t + 1, d, -1);
            }
        for (int e = 0; e < m.num_edges_td; ++e) {
            int p = es.children_of_comp[e].first;
            if (t + 1 < T && t + 1 > p)
                m.s_var[t + 1][e] = add_var(IlpModel::VarType::S, t + 1, e, -1);
        }
        for (int d = 0; d < D; ++d) {
            if (is_input(d)) continue;
            const auto& parents = g.dnodes[d].parents;
            m.create_var[t][d].assign(parents.size(), -1);
            for (size_t i = 0; i < parents.size(); ++i)
                if (parents[i] <= t)
                    m.create_var[t][d][i] = add_var(IlpModel::VarType::Create, t, d, parents[i]);
            if (is_sink(d)) continue;  // deliverables are never freed
            m.delete_var[t][d].assign(m.events[d].size(), -1);
            for (size_t i = 0; i < m.events[d].size(); ++i)
                if (m.events[d][i] <= t)
                    m.delete_var[t][d][i] = add_var(IlpModel::VarType::Delete, t, d,
                                                    m.events[d][i]);
        }
    }
    // the block output is the chain handoff: pinned across the loss boundary
    // and allowed to survive the final stage (the chain frees it after the
    // block's backward)
    const int p_term_out = add_var(IlpModel::VarType::P, T, g.output_data, -1);

    // R[t][k] as (variable, constant) pair: diagonal is constant 1, upper
    // triangle and the loss column are constant 0.
    auto r_of = [&](int t, int k) -> std::pair<int, int> {
        if (k == t) return {-1, 1};
        if (k > t) return {-1, 0};
        int v = m.r_var[t][k];
        return v >= 0 ? std::pair<int, int>{v, 0} : std::pair<int, int>{-1, 0};
    };
    // P[t][d] likewise; P[T][d] is the terminal state (sinks and the input
    // survive, everything else is dead); the block output is pinned across the
    // loss boundary.
    auto p_of = [&](int t, int d) -> std::pair<int, int> {
        if (is_input(d)) return {-1, 1};
        if (t == T) {
            if (d == g.output_data) return {p_term_out, 0};
            return {-1, is_sink(d) ? 1 : 0};
        }
        if (d == g.output_data && t == g.loss_index + 1) return {-1, 1};
        int v = m.p_var[t][d];
        return v >= 0 ? std::pair<int, int>{v, 0} : std::pair<int, int>{-1, 0};
    };

    struct RowBuilder {
        IlpModel::Row row;
        Bytes const_lhs = 0;
        void add(std::pair<int, int> vc, Bytes coef) {
            if (vc.first >= 0)
                row.terms.emplace_back(vc.first, coef);
            else
                const_lhs += coef * vc.second;
        }
        void add_var(int v, Bytes coef) {
            if (v >= 0) row.terms.emplace_back(v, coef);
        }
    };
    auto push = [&](RowBuilder& b, char sense, Bytes rhs, const char* tag) {
        b.row.sense = sense;
        b.row.rhs = rhs - b.const_lhs;
        b.row.tag = tag;
        // coalesce duplicate vars
        std::sort(b.row.terms.begin(), b.row.terms.end());
        std::vector<std::pair<int, Bytes>> out;
        for (auto& [v, c] : b.row.terms) {
            if (!out.empty() && out.back().first == v)
                out.back().second += c;
            else
                out.emplace_back(v, c);
        }
        out.erase(std::remove_if(out.begin(), out.end(),
                                 [](const auto& t) { return t.second == 0; }),
                  out.end());
        b.row.terms = std::move(out);
        if (b.row.terms.empty()) {
            bool ok = b.row.sense == '<'   ? 0 <= b.row.rhs
                      : b.row.sense == '>' ? 0 >= b.row.rhs
                                           : b.row.rhs == 0;
            if (!ok)
                throw ValidationError(std::string("constant-infeasible row: ") + tag);
            return;
        }
        m.rows.push_back(std::move(b.row));
    };

    // The alive expression after step k of stage t (before that step's
    // deletions when `before_deletes_at_k` is set). At or past a tensor's last
    // event of the stage the expression equals the stage carry, so the single
    // P[t+1][d] variable substitutes for the whole sum; propagation bites much
    // harder on the memory rows that way.
    auto add_alive_expr = [&](RowBuilder& b, int t, int d, int k, bool before_deletes_at_k,
                              Bytes coef, bool carry_subst = true) {
        if (!is_input(d) && carry_subst) {
            int last = -1;
            for (int e : m.events[d])
                if (e <= t) last = e;
            if (last >= 0 && (k > last || (k == last && !before_deletes_at_k))) {
                b.add(p_of(t + 1, d), coef);
                return;
            }
            if (last < 0) {  // no events this stage: the carry is the identity
                b.add(p_of(t, d), coef);
                return;
            }
        }
        b.add(p_of(t, d), coef);
        const auto& parents = g.dnodes[d].parents;
        for (size_t i = 0; i < parents.size(); ++i)
            if (parents[i] <= std::min(k, t) && !is_input(d))
                b.add_var(m.create_var[t][d][i], coef);
        if (is_input(d) || is_sink(d)) return;
        for (size_t i = 0; i < m.events[d].size(); ++i) {
            int e = m.events[d][i];
            if (e > std::min(k, t)) break;
            if (before_deletes_at_k && e == k) continue;
            b.add_var(m.delete_var[t][d][i], -coef);
        }
    };

    // --- feasibility rows ---
    for (int t = 0; t < T; ++t) {
        for (int e = 0; e < m.num_edges_td; ++e) {
            auto [p, d] = es.children_of_comp[e];
            int sv = m.s_var[t][e];
            if (sv < 0) continue;
            // saved data must be resident at the stage start
            if (auto pd = p_of(t, d); pd.first >= 0) {
                RowBuilder b;
                b.add_var(sv, 1);
                b.add(pd, -1);
                push(b, '<', 0, "S<=P");
            } else if (pd.second == 0) {
                RowBuilder b;
                b.add_var(sv, 1);
                push(b, '<', 0, "S<=P0");
            }
            // savedness persists only across stages where the producer ran
            if (t + 1 < T && m.s_var[t + 1][e] >= 0) {
                RowBuilder b;
                b.add_var(m.s_var[t + 1][e], 1);
                b.add_var(sv, -1);
                b.add(r_of(t, p), -1);
                push(b, '<', 0, "S-chain");
            }
        }
        // S[p+1][e] <= R[p][p] = 1 is vacuous, but the very first stage of an
        // edge needs its base case: S at stage p+1 is bounded by the diagonal
        // run, which always happened, so nothing to emit.
    }

    // input availability: consumer k needs every parent p of each dep d to be
    // either re-run this stage or saved w.r.t. that edge
    std::vector<std::vector<int>> edge_index(T, std::vector<int>(D, -1));
    for (int e = 0; e < m.num_edges_td; ++e)
        edge_index[es.children_of_comp[e].first][es.children_of_comp[e].second] = e;
    for (int t = 0; t < T; ++t)
        for (int k = 0; k <= t; ++k) {
            auto rk = r_of(t, k);
            if (rk.first < 0 && rk.second == 0) continue;
            for (int d : g.cnodes[k].deps) {
                for (int p : g.dnodes[d].parents) {
                    int e = edge_index[p][d];
                    RowBuilder b;
                    b.add(rk, 1);
                    b.add(r_of(t, p), -1);
                    if (e >= 0) b.add_var(m.s_var[t][e], -1);
                    push(b, '<', 0, "avail");
                }
            }
        }

    // --- memory bookkeeping rows ---
    for (int t = 0; t < T; ++t)
        for (int d = 0; d < D; ++d) {
            if (is_input(d)) continue;
            // alive bounds at every event step of this stage
            for (size_t i = 0; i < m.events[d].size(); ++i) {
                int e = m.events[d][i];
                if (e > t) break;
                RowBuilder lo, hi;
                add_alive_expr(lo, t, d, e, false, 1, false);
                push(lo, '>', 0, "alive>=0");
                add_alive_expr(hi, t, d, e, false, 1, false);
                push(hi, '<', 1, "alive<=1");
            }
            // created or already alive right after a parent runs
            const auto& parents = g.dnodes[d].parents;
            for (int p : parents) {
                if (p > t) continue;
                auto rp = r_of(t, p);
                if (rp.first < 0 && rp.second == 0) continue;
                RowBuilder b;
                // alive after step p counting the deletion at p as satisfying
                add_alive_expr(b, t, d, p, true, 1, false);
                b.add(rp, -1);
                push(b, '>', 0, "parent-presence");
            }
            // create only from a run of the producing step
            for (size_t i = 0; i < parents.size(); ++i) {
                int cv = m.create_var[t][d][i];
                if (cv < 0) continue;
                auto rp = r_of(t, parents[i]);
                if (rp.second == 1) continue;  // create <= 1
                RowBuilder b;
                b.add_var(cv, 1);
                b.add(rp, -1);
                push(b, '<', 0, "create<=R");
            }
            // eager deletion, linearized with equality:
            // delete[t][d][k] = R[t][k] * (1 - P[t+1][d]) * prod (1 - R[t][c])
            if (!is_sink(d)) {
                for (size_t i = 0; i < m.events[d].size(); ++i) {
                    int k = m.events[d][i];
                    int dv = i < m.delete_var[t][d].size() ? m.delete_var[t][d][i] : -1;
                    if (dv < 0) continue;
                    auto rk = r_of(t, k);
                    auto pn = p_of(t + 1, d);
                    std::vector<std::pair<int, int>> later_children;
                    for (int c : es.children_of_data[d])
                        if (c > k && c <= t) later_children.push_back(r_of(t, c));
                    bool const_zero = (rk.first < 0 && rk.second == 0) ||
                                      (pn.first < 0 && pn.second == 1);
                    for (auto& lc : later_children)
                        if (lc.first < 0 && lc.second == 1) const_zero = true;
                    if (const_zero) {
                        RowBuilder b;
                        b.add_var(dv, 1);
                        push(b, '<', 0, "delete=0");
                        continue;
                    }
                    // delete <= each factor
                    if (rk.first >= 0) {
                        RowBuilder b;
                        b.add_var(dv, 1);
                        b.add_var(rk.first, -1);
                        push(b, '<', 0, "del<=R");
                    }
                    if (pn.first >= 0) {
                        RowBuilder b;
                        b.add_var(dv, 1);
                        b.add_var(pn.first, 1);
                        push(b, '<', 1, "del<=1-P");
                    }
                    for (auto& lc : later_children)
                        if (lc.first >= 0) {
                            RowBuilder b;
                            b.add_var(dv, 1);
                            b.add_var(lc.first, 1);
                            push(b, '<', 1, "del<=1-Rc");
                        }
                    // delete >= sum(factors) - (n-1), which folds to
                    // delete >= R[t][k] - P[t+1][d] - sum_c R[t][c]
                    RowBuilder b;
                    b.add_var(dv, 1);
                    b.add(rk, -1);
                    b.add(pn, 1);  // factor is (1 - P)
                    for (auto& lc : later_children) b.add(lc, 1);
                    push(b, '>', 0, "del>=and");
                }
            }
            // stage carry: aliveness at the last event step becomes P[t+1]
            {
                RowBuilder b;
                int last = -1;
                for (int e : m.events[d])
                    if (e <= t) last = e;
                if (last >= 0)
                    add_alive_expr(b, t, d, last, false, 1, false);
                else
                    b.add(p_of(t, d), 1);
                b.add(p_of(t + 1, d), -1);
                push(b, '=', 0, "carry");
            }
        }

    // --- memory limit rows ---
    for (int t = 0; t < T; ++t) {
        for (int k = 0; k <= t; ++k) {
            bool has_event = false;
            for (int d = 0; d < D && !has_event; ++d)
                if (!is_input(d) &&
                    std::find(m.events[d].begin(), m.events[d].end(), k) != m.events[d].end())
                    has_event = true;
            auto rk = r_of(t, k);
            bool runs = rk.first >= 0 || rk.second == 1;
            if (!has_event && !(runs && g.cnodes[k].tmp_mem > 0)) continue;
            RowBuilder b;
            b.add(std::pair<int, int>{-1, 1}, g.dnodes[g.input_data].size);
            for (int d = 0; d < D; ++d) {
                if (is_input(d)) continue;
                add_alive_expr(b, t, d, k, true, g.dnodes[d].size);
            }
            if (g.cnodes[k].tmp_mem > 0) b.add(rk, g.cnodes[k].tmp_mem);
            push(b, '<', budget.m_peak, "peak");
        }
    }
    {
        // memory retained across the fwd/bwd boundary
        RowBuilder b;
        b.add(std::pair<int, int>{-1, 1}, g.dnodes[g.input_data].size);
        for (int d = 0; d < D; ++d) {
            if (is_input(d)) continue;
            add_alive_expr(b, g.loss_index, d, g.loss_index, false, g.dnodes[d].size);
        }
        push(b, '<', budget.m_save, "save");
    }

    return m;
}

// ---------------------------------------------------------------------------
// Budget grid
// ---------------------------------------------------------------------------

// Evenly spaced inclusive range; a single point takes the upper endpoint.
inline std::vector<Bytes> even_spacing(Bytes lo, Bytes hi, int n) {
    if (n <= 1 || lo >= hi) return {hi};
    std::vector<Bytes> out;
    for (int i = 0; i < n; ++i)
        out.push_back(lo + (hi - lo) * static_cast<Bytes>(i) / (n - 1));
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

struct BudgetGrid {
    Bytes min_peak = 0;
    Bytes max_peak = 0;
    std::vector<BudgetPair> pairs;
};

inline BudgetGrid budget_grid(const CDGraph& g, int n_peak, int n_save) {
    if (g.cnodes.empty()) throw ValidationError("cannot build a budget grid for an empty block");
    Chain one = single_block_chain(g);
    SimulateOptions opts;
    opts.require_complete = true;
    BudgetGrid grid;
    grid.min_peak = simulate(eager_free_schedule(g), one, -1, opts).peak_mem;
    grid.max_peak = simulate(no_recompute_schedule(g), one, -1, opts).peak_mem;
    for (Bytes peak : even_spacing(grid.min_peak, grid.max_peak, n_peak))
        for (Bytes save : even_spacing(g.output_size(), peak, n_save))
            grid.pairs.push_back({peak, save});
    return grid;
}

}  // namespace remat
