#include <catch2/catch_amalgamated.hpp>

#include "remat/chain_dp.hpp"
#include "remat/pipeline.hpp"
#include "test_helpers.hpp"

using namespace remat;

TEST_CASE("quantize ceils sizes and floors the budget") {
    Quantization q = quantize(1000, 10);
    CHECK(q.unit == 100);
    CHECK(q.budget_units == 10);
    CHECK(to_units(100, q.unit) == 1);
    CHECK(to_units(250, q.unit) == 3);
    CHECK(to_units(300, q.unit) == 3);  // exact multiples do not inflate
    Quantization one = quantize(7, 1);
    CHECK(one.unit == 7);
    CHECK(one.budget_units == 1);
}

TEST_CASE("single block with one option sums its pass times") {
    OptionMenu menu;
    menu.act_sizes = {4, 4};
    BlockOption zero;
    zero.option_id = 0;
    zero.time_fwd = 10;
    zero.save_mem = 4;
    zero.peak_fwd = zero.peak_fwd_pre = 8;
    BlockOption o1;
    o1.option_id = 1;
    o1.time_fwd = 10;
    o1.time_bwd = 12;
    o1.save_mem = 10;
    o1.peak_fwd = o1.peak_fwd_pre = 10;
    o1.peak_bwd = 14;
    menu.options = {{zero, o1}};
    DpTable table(menu, 1, 100);
    CHECK(table.opt(0, 0, 100) == 22);
}

TEST_CASE("tiny chain reproduces the worked optima") {
    OptionMenu menu = testing::tiny_chain_menu();
    DpTable table(menu, 1, 64);
    // ample memory: both packs held, no recomputation
    CHECK(table.opt(0, 1, 64) == 39);
    CHECK(table.opt(0, 1, 12) == 39);
    // tight memory: block 0 runs forward twice via a cut at block 1
    CHECK(table.opt(0, 1, 11) == 49);
    CHECK(table.opt(0, 1, 10) == 49);
    CHECK(table.opt(0, 1, 9) >= kInfTime);
    DpArg a = table.arg(0, 1, 10);
    CHECK(a.kind == DpArg::Cut);
    CHECK(a.value == 1);
}

TEST_CASE("tiny chain schedules rebuild per the argmins") {
    OptionMenu menu = testing::tiny_chain_menu();
    // chain backing only supplies ids for the emitted ops
    Chain chain;
    chain.blocks = {testing::toy_block(4), testing::toy_block(4)};
    chain.blocks[1].dnodes[chain.blocks[1].dnode_index("d2")].size = 2;
    chain.blocks[1].dnodes[chain.blocks[1].dnode_index("g2")].size = 2;
    chain.equiv_class = {0, 1};

    DpTable ample(menu, 1, 12);
    std::vector<ScheduleOp> ops;
    build_schedule_rec(ample, menu, chain, 0, 1, 12, ops);
    std::vector<ScheduleOp> expect = {
        ScheduleOp::block_fwd(0, 1),
        ScheduleOp::block_fwd(1, 1),
        ScheduleOp::compute(1, "loss"),
        ScheduleOp::block_bwd(1, 1),
        ScheduleOp::block_bwd(0, 1),
    };
    CHECK(ops == expect);

    DpTable tight(menu, 1, 10);
    ops.clear();
    build_schedule_rec(tight, menu, chain, 0, 1, 10, ops);
    // block 0's forward runs twice: once bare, once saving for its backward
    int fwd0 = 0, fwd0_opt0 = 0;
    for (const ScheduleOp& op : ops)
        if (op.kind == ScheduleOp::BlockFwd && op.block == 0) {
            ++fwd0;
            if (op.option == 0) ++fwd0_opt0;
        }
    CHECK(fwd0 == 2);
    CHECK(fwd0_opt0 == 1);
}

TEST_CASE("infeasible cells raise InfeasibleBudget on reconstruction") {
    OptionMenu menu = testing::tiny_chain_menu();
    Chain chain;
    chain.blocks = {testing::toy_block(4), testing::toy_block(4)};
    chain.equiv_class = {0, 1};
    DpTable table(menu, 1, 9);
    std::vector<ScheduleOp> ops;
    CHECK_THROWS_AS(build_schedule_rec(table, menu, chain, 0, 1, 9, ops), InfeasibleBudget);
}

TEST_CASE("validity predicates reject undersized budgets") {
    OptionMenu menu = testing::tiny_chain_menu();
    DpTable table(menu, 1, 64);
    // block 0 option 1 needs peak_fwd - a_0 = 6 beyond the input
    CHECK(table.opt(0, 0, 5) >= kInfTime);  // cannot even run the forward
    CHECK(table.opt(0, 1, 64) < kInfTime);  // ample budget: everything valid
}

TEST_CASE("opt is monotone in memory") {
    std::mt19937 rng(5);
    for (int i = 0; i < 60; ++i) {
        OptionMenu menu = testing::random_menu(rng, 4, 3);
        DpTable table(menu, 1, 24);
        int L = menu.length();
        for (int m = 0; m + 1 <= 24; ++m)
            CHECK(table.opt(0, L - 1, m) >= table.opt(0, L - 1, m + 1));
    }
}

TEST_CASE("ample memory reaches the sum of best pass times") {
    std::mt19937 rng(9);
    for (int i = 0; i < 40; ++i) {
        OptionMenu menu = testing::random_menu(rng, 4, 3);
        int L = menu.length();
        Micros expect = 0;
        for (int b = 0; b < L; ++b) {
            Micros best = kInfTime;
            for (const BlockOption& o : menu.options[b])
                if (o.has_bwd()) best = std::min(best, o.total_time());
            expect += best;
        }
        DpTable table(menu, 1, 4096);
        CHECK(table.opt(0, L - 1, 4096) == expect);
    }
}

TEST_CASE("permuting blocks of one equivalence class keeps the optimum") {
    std::mt19937 rng(13);
    for (int i = 0; i < 20; ++i) {
        OptionMenu menu = testing::random_menu(rng, 3, 2);
        if (menu.length() < 2) continue;
        // force blocks 0 and 1 identical (same menu, same seam sizes)
        menu.act_sizes[1] = menu.act_sizes[0];
        menu.act_sizes[2] = menu.act_sizes[0];
        menu.options[1] = menu.options[0];
        OptionMenu swapped = menu;
        std::swap(swapped.options[0], swapped.options[1]);
        for (int m = 0; m <= 20; ++m) {
            DpTable a(menu, 1, 20);
            DpTable b(swapped, 1, 20);
            CHECK(a.opt(0, menu.length() - 1, m) == b.opt(0, menu.length() - 1, m));
        }
    }
}

TEST_CASE("the DP matches exhaustive chain enumeration") {
    std::mt19937 rng(37);
    int chains = 0;
    while (chains < 60) {
        OptionMenu menu = testing::random_menu(rng, 4, 3);
        int L = menu.length();
        DpTable table(menu, 1, 20);
        for (int m = 0; m <= 20; m += 2) {
            Micros dp = table.opt(0, L - 1, m);
            Micros oracle = testing::chain_oracle(menu, m + menu.act_sizes[0]);
            INFO("chain " << chains << " L=" << L << " m=" << m);
            if (dp >= kInfTime)
                CHECK(oracle >= kInfTime);
            else
                CHECK(dp == oracle);
        }
        ++chains;
    }
}

TEST_CASE("free-order replay never beats the DP by more than its extra moves") {
    // the relaxed search may reorder and drop tensors beyond the class the
    // scheduler optimizes over, so it lower-bounds the DP
    std::mt19937 rng(53);
    for (int i = 0; i < 15; ++i) {
        OptionMenu menu = testing::random_menu(rng, 3, 2);
        int L = menu.length();
        DpTable table(menu, 1, 16);
        for (int m = 0; m <= 16; m += 4) {
            Micros dp = table.opt(0, L - 1, m);
            if (dp >= kInfTime) continue;
            Micros relaxed =
                testing::chain_oracle_dijkstra(menu, m + menu.act_sizes[0], L + 3);
            CHECK(relaxed <= dp);
        }
    }
}

TEST_CASE("work per cell stays within (t-s)+B+1") {
    std::mt19937 rng(41);
    for (int i = 0; i < 20; ++i) {
        OptionMenu menu = testing::random_menu(rng, 4, 3);
        DpTable table(menu, 1, 20);
        CHECK(table.worst_cell_allowance <= 0);
    }
}

TEST_CASE("solve_chain reserves the chain input and reports min feasible budget") {
    OptionMenu menu = testing::tiny_chain_menu();
    Chain chain;
    chain.blocks = {testing::toy_block(4), testing::toy_block(4)};
    chain.blocks[1].dnodes[chain.blocks[1].dnode_index("d2")].size = 2;
    chain.blocks[1].dnodes[chain.blocks[1].dnode_index("g2")].size = 2;
    chain.equiv_class = {0, 1};
    // budget in bytes: m_top = budget - a_0 under unit 1
    ChainSolution sol = solve_chain(chain, menu, 16, 16);
    CHECK(sol.opt_time == 39);
    ChainSolution tight = solve_chain(chain, menu, 14, 14);
    CHECK(tight.opt_time == 49);
    try {
        solve_chain(chain, menu, 12, 12);
        FAIL("expected InfeasibleBudget");
    } catch (const InfeasibleBudget& e) {
        CHECK(e.min_feasible_budget == 14);  // 10 units beyond the 4-byte input
    }
}
