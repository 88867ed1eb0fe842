#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "remat/errors.hpp"
#include "remat/ilp_model.hpp"
#include "remat/ilp_solver.hpp"
#include "remat/simulate.hpp"
#include "remat/types.hpp"

namespace remat {

namespace detail {

struct ReplayResult {
    Micros elapsed = 0;
    Bytes peak = 0;
    Bytes current = 0;
    std::vector<char> resident;
};

// Block-local replay of compute/forget ops from an arbitrary resident set,
// with the simulator's peak accounting.
inline ReplayResult replay_ops(const CDGraph& g, const std::vector<char>& start,
                               const std::vector<BlockLocalOp>& ops) {
    ReplayResult r;
    r.resident = start;
    for (int d = 0; d < static_cast<int>(g.dnodes.size()); ++d)
        if (r.resident[d]) r.current += g.dnodes[d].size;
    r.peak = r.current;
    for (const BlockLocalOp& op : ops) {
        if (op.kind == BlockLocalOp::Compute) {
            const CNode& c = g.cnodes[op.node];
            for (int d : c.deps)
                if (!r.resident[d])
                    throw DanglingDependency("option replay: " + c.id + " needs absent " +
                                             g.dnodes[d].id);
            Bytes fresh = 0;
            for (int d : c.outputs)
                if (!r.resident[d]) fresh += g.dnodes[d].size;
            r.peak = std::max(r.peak, r.current + c.tmp_mem + fresh);
            for (int d : c.outputs)
                if (!r.resident[d]) {
                    r.resident[d] = 1;
                    r.current += g.dnodes[d].size;
                }
            r.elapsed += c.time;
        } else {
            if (!r.resident[op.node])
                throw ForgetAbsent("option replay: forget of absent " + g.dnodes[op.node].id);
            r.resident[op.node] = 0;
            r.current -= g.dnodes[op.node].size;
        }
    }
    return r;
}

}  // namespace detail

// Turn a verified ILP solution into a block option. The forward fragment is
// everything up to the loss stage (without the loss itself), the backward
// fragment everything after; measured times, retained bytes and phase peaks
// come from replaying the fragments, never from the model's own accounting.
inline BlockOption extract_option(const CDGraph& g, const IlpModel& m,
                                  const std::vector<signed char>& assignment, int option_id) {
    if (!assignment_satisfies(m, assignment))
        throw SolutionInfeasible("assignment fails the model re-check");
    const int T = m.T;
    const int D = m.D;
    auto r_val = [&](int t, int k) -> bool {
        if (k == t) return true;
        int v = m.r_var[t][k];
        return v >= 0 && assignment[v];
    };
    auto del_val = [&](int t, int d, size_t slot) -> bool {
        if (m.delete_var[t][d].empty()) return false;
        int v = m.delete_var[t][d][slot];
        return v >= 0 && assignment[v];
    };

    BlockOption o;
    o.option_id = option_id;
    for (int t = 0; t < T; ++t) {
        auto& ops = t <= m.loss ? o.fwd_ops : o.bwd_ops;
        for (int k = 0; k <= t; ++k) {
            if (r_val(t, k) && !(t == m.loss && k == m.loss))
                ops.push_back({BlockLocalOp::Compute, k});
            for (int d = 0; d < D; ++d)
                for (size_t slot = 0; slot < m.events[d].size(); ++slot)
                    if (m.events[d][slot] == k && del_val(t, d, slot))
                        ops.push_back({BlockLocalOp::Forget, d});
        }
    }

    std::vector<char> start(D, 0);
    start[g.input_data] = 1;
    auto fwd = detail::replay_ops(g, start, o.fwd_ops);
    o.time_fwd = fwd.elapsed;
    o.peak_fwd = fwd.peak;
    o.save_mem = fwd.current;

    std::vector<char> start_pre = start;
    start_pre[g.output_data] = 1;
    o.peak_fwd_pre = detail::replay_ops(g, start_pre, o.fwd_ops).peak;

    std::vector<char> boundary = fwd.resident;
    int og = g.output_grad();
    Bytes at_loss = fwd.current;
    if (og >= 0 && !boundary[og]) {
        boundary[og] = 1;
        at_loss += g.dnodes[og].size;
    }
    // the output survives the block when nothing after the loss needed it;
    // the chain owns that tensor, so the handoff forget is emitted here
    {
        auto probe = detail::replay_ops(g, boundary, o.bwd_ops);
        if (probe.resident[g.output_data])
            o.bwd_ops.push_back({BlockLocalOp::Forget, g.output_data});
    }
    auto bwd = detail::replay_ops(g, boundary, o.bwd_ops);
    o.time_bwd = bwd.elapsed;
    o.peak_bwd = bwd.peak;

    if (o.peak_fwd > m.budget.m_peak || o.peak_bwd > m.budget.m_peak)
        throw SolutionInfeasible("extracted option exceeds m_peak on replay");
    if (at_loss > m.budget.m_save)
        throw SolutionInfeasible("extracted option exceeds m_save at the loss");
    return o;
}

// The no-save forward: computes the ancestor closure of the block output in
// topological order, forgetting every intermediate right after its last use
// inside the closure. Keeps only the input and the output.
inline BlockOption option_zero(const CDGraph& g) {
    const int T = static_cast<int>(g.cnodes.size());
    const int D = static_cast<int>(g.dnodes.size());
    EdgeSets es = derive_edge_sets(g);

    std::vector<char> need_d(D, 0), need_c(T, 0);
    need_d[g.output_data] = 1;
    for (int c = T - 1; c >= 0; --c) {
        bool needed = false;
        for (int d : g.cnodes[c].outputs) needed = needed || need_d[d];
        if (!needed || g.cnodes[c].kind != CNodeKind::Forward) continue;
        need_c[c] = 1;
        for (int d : g.cnodes[c].deps) need_d[d] = 1;
    }

    std::vector<int> last_use(D, -1);
    for (int c = 0; c < T; ++c) {
        if (!need_c[c]) continue;
        for (int d : g.cnodes[c].deps) last_use[d] = std::max(last_use[d], c);
    }

    BlockOption o;
    o.option_id = 0;
    for (int c = 0; c < T; ++c) {
        if (!need_c[c]) continue;
        o.fwd_ops.push_back({BlockLocalOp::Compute, c});
        for (int d : g.cnodes[c].outputs)  // side outputs the sweep never reads
            if (!need_d[d]) o.fwd_ops.push_back({BlockLocalOp::Forget, d});
        for (int d = 0; d < D; ++d)
            if (last_use[d] == c && d != g.input_data && d != g.output_data)
                o.fwd_ops.push_back({BlockLocalOp::Forget, d});
    }

    std::vector<char> start(D, 0);
    start[g.input_data] = 1;
    auto fwd = detail::replay_ops(g, start, o.fwd_ops);
    o.time_fwd = fwd.elapsed;
    o.peak_fwd = fwd.peak;
    o.save_mem = g.input_size();  // only the input survives
    std::vector<char> start_pre = start;
    start_pre[g.output_data] = 1;
    o.peak_fwd_pre = detail::replay_ops(g, start_pre, o.fwd_ops).peak;
    return o;
}

// Duplicate and Pareto-dominated options are dropped; option 0 always stays.
// Ordering is deterministic: by retained bytes, then total time, then peaks.
inline std::vector<BlockOption> dedup_options(std::vector<BlockOption> opts) {
    std::vector<BlockOption> zero, rest;
    for (BlockOption& o : opts)
        (o.option_id == 0 ? zero : rest).push_back(std::move(o));

    std::sort(rest.begin(), rest.end(), [](const BlockOption& a, const BlockOption& b) {
        if (a.save_mem != b.save_mem) return a.save_mem < b.save_mem;
        if (a.total_time() != b.total_time()) return a.total_time() < b.total_time();
        if (a.peak_fwd != b.peak_fwd) return a.peak_fwd < b.peak_fwd;
        if (a.peak_bwd != b.peak_bwd) return a.peak_bwd < b.peak_bwd;
        return a.peak_fwd_pre < b.peak_fwd_pre;
    });
    rest.erase(std::unique(rest.begin(), rest.end(),
                           [](const BlockOption& a, const BlockOption& b) {
                               return a.fwd_ops == b.fwd_ops && a.bwd_ops == b.bwd_ops;
                           }),
               rest.end());

    auto dominates = [](const BlockOption& a, const BlockOption& b) {
        bool le = a.total_time() <= b.total_time() && a.save_mem <= b.save_mem &&
                  a.peak_fwd <= b.peak_fwd && a.peak_bwd <= b.peak_bwd &&
                  a.peak_fwd_pre <= b.peak_fwd_pre;
        bool strict = a.total_time() < b.total_time() || a.save_mem < b.save_mem ||
                      a.peak_fwd < b.peak_fwd || a.peak_bwd < b.peak_bwd ||
                      a.peak_fwd_pre < b.peak_fwd_pre;
        return le && strict;
    };
    std::vector<BlockOption> kept;
    for (size_t i = 0; i < rest.size(); ++i) {
        bool dominated = false;
        for (size_t j = 0; j < rest.size() && !dominated; ++j)
            if (j != i && dominates(rest[j], rest[i])) dominated = true;
        if (!dominated) kept.push_back(rest[i]);
    }

    std::vector<BlockOption> out = std::move(zero);
    for (size_t i = 0; i < kept.size(); ++i) {
        kept[i].option_id = static_cast<int>(i) + 1;
        out.push_back(std::move(kept[i]));
    }
    return out;
}

}  // namespace remat
