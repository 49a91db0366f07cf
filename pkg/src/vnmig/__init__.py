"""Deterministic discrete-event simulator for live virtual-network migration
on software-defined substrates: flow-table cloning, gateway-based traffic
redirection, command-channel lag models, a control-plane transparency layer,
and the analytic loss oracle that checks them."""

from .analysis import (LagCdf, LossEstimate, analytic_loss, channel_lag_cdf,
                       compare_strategies, pair_analytic_loss, sweep_rtt,
                       sweep_table_size)
from .controller import (CommandChannel, LagModel, MigrationAborted,
                         MigrationController, MigrationOptions,
                         RedirectionSchedule, RedirectPoint, RunHandle,
                         all_pairs_flows, build_redirection_schedule,
                         clone_tables, execute_schedule,
                         gateway_redirect_points, migrate, poll_flow_tables,
                         presenter_translate, run_migration,
                         simulate_baseline, translate_rule)
from .dataplane import (DROP, FLOOD, MISS, Delete, FlowRule, FlowTable,
                        HypervisorBuffer, Install, LearningSwitchApp, Match,
                        Output, RulePredicate, SwitchState, Update,
                        apply_flow_mod, match, vlan_deliver)
from .metrics import FlowOutcome, MigrationMetrics
from .netsim import PacketNetwork
from .simengine import Engine, HostFlow, Packet, cbr_generate, make_rng
from .topology import (LatencyTable, ScenarioTopology, SharedVlan, VnMapping,
                       VnShape, build_cross_aggregate_scenario,
                       build_gateway_scenario, max_gateway_path_ms,
                       path_latency_ms, scale_vn_latencies, validate)

__version__ = "0.1.0"
