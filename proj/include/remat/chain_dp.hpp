#pragma once

#include <algorithm>
#include <cassert>
#include <limits>
#include <string>
#include <vector>

#include "remat/errors.hpp"
#include "remat/types.hpp"

namespace remat {

// Per-block execution options plus the chain's activation sizes. Option 0
// (forward without saving) must come first in every block's list.
struct OptionMenu {
    std::vector<std::vector<BlockOption>> options;  // per block
    std::vector<Bytes> act_sizes;                   // a_0..a_L, bytes

    int length() const { return static_cast<int>(options.size()); }
};

inline constexpr Micros kInfTime = std::numeric_limits<Micros>::max() / 4;

struct Quantization {
    Bytes unit = 1;
    Bytes budget_units = 0;
};

// unit = ceil(budget/units); sizes are ceiled, the budget floored, so any
// schedule feasible under quantized accounting is feasible in exact bytes.
inline Quantization quantize(Bytes budget_bytes, int units) {
    if (units < 1) throw ValidationError("quantization needs at least one unit");
    Quantization q;
    q.unit = (budget_bytes + units - 1) / units;
    if (q.unit < 1) q.unit = 1;
    q.budget_units = budget_bytes / q.unit;
    return q;
}

inline Bytes to_units(Bytes bytes, Bytes unit) { return (bytes + unit - 1) / unit; }

// Decision record for one table cell.
struct DpArg {
    enum Kind : std::uint8_t { None, Option, Cut } kind = None;
    int value = -1;  // option id for Option, cut index for Cut
};

// Opt(s, t, m): minimal time to run blocks s..t (forward and backward) with
// a_s resident and m quantized units available for everything else. Cells
// with t = L-1 produce the final activation and its gradient via the loss;
// cells with t < L-1 assume both are already resident (and counted in m),
// since such subchains only ever run after the turn of the enclosing chain.
class DpTable {
public:
    DpTable(const OptionMenu& menu, Bytes unit, int m_max)
        : L_(menu.length()), unit_(unit), m_max_(m_max) {
        if (L_ == 0) throw ValidationError("empty option menu");
        act_u_.resize(L_ + 1);
        for (int i = 0; i <= L_; ++i) act_u_[i] = to_units(menu.act_sizes[i], unit);

        fwd_req_.assign(L_, {});
        fwd_req_pre_.assign(L_, {});
        bwd_req_.assign(L_, {});
        pack_chg_.assign(L_, {});
        time_fwd_.assign(L_, {});
        time_bwd_.assign(L_, {});
        option_ids_.assign(L_, {});
        fwd0_own_.assign(L_, 0);
        fwd0_full_.assign(L_, 0);
        time_fwd0_.assign(L_, 0);
        for (int i = 0; i < L_; ++i) {
            const Bytes a_i = menu.act_sizes[i];
            bool saw_zero = false;
            for (const BlockOption& o : menu.options[i]) {
                if (o.option_id == 0) {
                    fwd0_own_[i] = to_units(o.peak_fwd - a_i, unit);
                    fwd0_full_[i] = to_units(o.peak_fwd, unit);
                    time_fwd0_[i] = o.time_fwd;
                    saw_zero = true;
                    continue;
                }
                if (!o.has_bwd())
                    throw ValidationError("saved option without a backward in block " +
                                          std::to_string(i));
                option_ids_[i].push_back(o.option_id);
                fwd_req_[i].push_back(to_units(o.peak_fwd - a_i, unit));
                fwd_req_pre_[i].push_back(to_units(o.peak_fwd_pre - a_i, unit));
                bwd_req_[i].push_back(to_units(o.peak_bwd - a_i, unit));
                pack_chg_[i].push_back(to_units(o.save_mem - a_i, unit));
                time_fwd_[i].push_back(o.time_fwd);
                time_bwd_[i].push_back(*o.time_bwd);
            }
            if (!saw_zero) throw ValidationError("block " + std::to_string(i) + " lacks option 0");
        }

        opt_.assign(static_cast<size_t>(L_) * L_, {});
        arg_.assign(static_cast<size_t>(L_) * L_, {});
        for (int span = 0; span < L_; ++span)
            for (int s = 0; s + span < L_; ++s) fill_cell(s, s + span);
    }

    Micros opt(int s, int t, int m) const {
        if (m < 0) return kInfTime;
        if (m > m_max_) m = m_max_;
        return opt_[cell(s, t)][m];
    }
    DpArg arg(int s, int t, int m) const {
        if (m < 0) return {};
        if (m > m_max_) m = m_max_;
        return arg_[cell(s, t)][m];
    }
    int length() const { return L_; }
    Bytes unit() const { return unit_; }
    int m_max() const { return m_max_; }
    Bytes act_units(int i) const { return act_u_[i]; }

    // instrumentation for the per-cell work bound (t-s) + B + 1
    long max_candidates_per_cell = 0;
    long worst_cell_allowance = 0;

private:
    size_t cell(int s, int t) const { return static_cast<size_t>(s) * L_ + t; }

    void fill_cell(int s, int t) {
        const bool seeded = t < L_ - 1;  // final activation + gradient pre-resident
        const Bytes seed = seeded ? 2 * act_u_[t + 1] : 0;
        auto& opt = opt_[cell(s, t)];
        auto& arg = arg_[cell(s, t)];
        opt.assign(m_max_ + 1, kInfTime);
        arg.assign(m_max_ + 1, DpArg{});
        const int n_opts = static_cast<int>(option_ids_[s].size());

        for (int m = 0; m <= m_max_; ++m) {
            Micros best = kInfTime;
            DpArg best_arg;
            long cands = 0;

            for (int oi = 0; oi < n_opts; ++oi) {
                ++cands;
                Bytes fwd_need =
                    (s == t && seeded) ? fwd_req_pre_[s][oi] + act_u_[t + 1]
                                       : fwd_req_[s][oi] + seed;
                if (fwd_need > m || bwd_req_[s][oi] > m) continue;
                Micros total = time_fwd_[s][oi] + time_bwd_[s][oi];
                if (s < t) {
                    if (pack_chg_[s][oi] > m) continue;
                    Micros sub = opt_[cell(s + 1, t)][m - pack_chg_[s][oi]];
                    if (sub >= kInfTime) continue;
                    total += sub;
                }
                if (total < best) {
                    best = total;
                    best_arg = {DpArg::Option, option_ids_[s][oi]};
                }
            }

            Micros sweep = 0;
            bool sweep_ok = fwd0_own_[s] + seed <= m;
            for (int c = s + 1; c <= t && sweep_ok; ++c) {
                ++cands;
                sweep += time_fwd0_[c - 1];
                // block c-1's forward runs while its own input is resident
                if (c - 1 > s && fwd0_full_[c - 1] + seed > m) break;
                if (act_u_[c] > m) continue;
                Micros right = opt_[cell(c, t)][m - act_u_[c]];
                Micros left = opt_[cell(s, c - 1)][m];
                if (right >= kInfTime || left >= kInfTime) continue;
                Micros total = sweep + right + left;
                if (total < best) {
                    best = total;
                    best_arg = {DpArg::Cut, c};
                }
            }

            opt[m] = best;
            arg[m] = best >= kInfTime ? DpArg{} : best_arg;
            long allowance = (t - s) + n_opts + 1;
            max_candidates_per_cell = std::max(max_candidates_per_cell, cands);
            worst_cell_allowance = std::max(worst_cell_allowance, cands - allowance);
            assert(cands <= allowance);
        }
    }

    int L_;
    Bytes unit_;
    int m_max_;
    std::vector<Bytes> act_u_;
    std::vector<std::vector<Bytes>> fwd_req_, fwd_req_pre_, bwd_req_, pack_chg_;
    std::vector<std::vector<Micros>> time_fwd_, time_bwd_;
    std::vector<std::vector<int>> option_ids_;
    std::vector<Bytes> fwd0_own_, fwd0_full_;
    std::vector<Micros> time_fwd0_;
    std::vector<std::vector<Micros>> opt_;
    std::vector<std::vector<DpArg>> arg_;
};

namespace detail {

inline const BlockOption& menu_option(const OptionMenu& menu, int block, int id) {
    for (const BlockOption& o : menu.options[block])
        if (o.option_id == id) return o;
    throw ValidationError("menu for block " + std::to_string(block) + " lacks option " +
                          std::to_string(id));
}

}  // namespace detail

// Rebuild the schedule from the table decisions. The single loss op is
// emitted at the base cell of the chain's final block.
inline void build_schedule_rec(const DpTable& table, const OptionMenu& menu, const Chain& chain,
                               int s, int t, int m, std::vector<ScheduleOp>& out) {
    if (table.opt(s, t, m) >= kInfTime)
        throw InfeasibleBudget("no feasible schedule for blocks " + std::to_string(s) + ".." +
                               std::to_string(t));
    DpArg a = table.arg(s, t, m);
    if (a.kind == DpArg::Option) {
        const BlockOption& o = detail::menu_option(menu, s, a.value);
        out.push_back(ScheduleOp::block_fwd(s, a.value));
        if (s == t) {
            if (t == table.length() - 1) {
                const CDGraph& g = chain.blocks[t];
                out.push_back(ScheduleOp::compute(t, g.cnodes[g.loss_index].id));
            }
            out.push_back(ScheduleOp::block_bwd(s, a.value));
            return;
        }
        Bytes chg = to_units(o.save_mem - menu.act_sizes[s], table.unit());
        build_schedule_rec(table, menu, chain, s + 1, t, m - static_cast<int>(chg), out);
        out.push_back(ScheduleOp::block_bwd(s, a.value));
        return;
    }
    if (a.kind == DpArg::Cut) {
        int c = a.value;
        out.push_back(ScheduleOp::block_fwd(s, 0));
        for (int j = s + 1; j < c; ++j) {
            out.push_back(ScheduleOp::block_fwd(j, 0));
            out.push_back(ScheduleOp::forget(j, chain.blocks[j].dnodes[chain.blocks[j].input_data].id));
        }
        build_schedule_rec(table, menu, chain, c, t, m - static_cast<int>(table.act_units(c)),
                           out);
        build_schedule_rec(table, menu, chain, s, c - 1, m, out);
        return;
    }
    throw InfeasibleBudget("cell without a decision");
}

struct ChainSolution {
    Schedule schedule;
    Micros opt_time = 0;
    Bytes unit = 1;
    int m_top = 0;
};

inline ChainSolution solve_chain(const Chain& chain, const OptionMenu& menu, Bytes budget_bytes,
                                 int units) {
    Quantization q = quantize(budget_bytes, units);
    Bytes a0_u = to_units(menu.act_sizes[0], q.unit);
    Bytes m_top = q.budget_units - a0_u;  // the chain input stays resident throughout
    if (m_top < 0)
        throw InfeasibleBudget("budget cannot hold the chain input", -1);
    DpTable table(menu, q.unit, static_cast<int>(m_top));
    const int L = chain.length();
    Micros best = table.opt(0, L - 1, static_cast<int>(m_top));
    if (best >= kInfTime) {
        // find the feasibility threshold under the current quantization: every
        // cell requirement is bounded by the total footprint of a full chain
        Bytes cap = 0;
        for (int i = 0; i < L; ++i) {
            Bytes worst = 0;
            for (const BlockOption& o : menu.options[i])
                worst = std::max({worst, to_units(o.peak_fwd, q.unit),
                                  to_units(o.peak_bwd, q.unit),
                                  to_units(o.save_mem, q.unit)});
            cap += worst;
        }
        for (int i = 0; i <= L; ++i) cap += 2 * to_units(menu.act_sizes[i], q.unit);
        DpTable wide(menu, q.unit, static_cast<int>(cap));
        Bytes min_feasible = -1;
        for (int m = 0; m <= cap; ++m)
            if (wide.opt(0, L - 1, m) < kInfTime) {
                min_feasible = (m + a0_u) * q.unit;
                break;
            }
        throw InfeasibleBudget("budget of " + std::to_string(budget_bytes) +
                                   " bytes is infeasible for this chain",
                               min_feasible);
    }
    ChainSolution sol;
    sol.opt_time = best;
    sol.unit = q.unit;
    sol.m_top = static_cast<int>(m_top);
    build_schedule_rec(table, menu, chain, 0, L - 1, static_cast<int>(m_top),
                       sol.schedule.ops);
    return sol;
}

}  // namespace remat
