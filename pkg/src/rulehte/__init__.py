"""Rule-ensemble heterogeneous treatment effect estimation for two-arm trials."""

from .dataset import (CsvSchema, FoldAssignment, LinearBasis, TrialDataset,
                      build_linear_basis, load_csv, save_csv, split_folds,
                      winsor_bounds)
from .boosting import GBTEnsemble, RegressionTree, fit_gbt, fit_tree, sample_terminal_count
from .rules import Rule, RuleSet, canonicalize, evaluate_rules, extract_rules, sort_rules
from .solver import (Coefficients, DesignMatrix, GroupSpec, build_design,
                     cross_validate, fit_group_lasso, group_soft_threshold,
                     lambda_path)
from .hte import (FitSettings, FittedHTEModel, RuleReportRow, fit_hte_model,
                  rule_importance, rule_support, subgroup_ate, tertile_diagnostic)
from .simharness import (ScenarioSpec, SimResult, compute_metrics, gen_scenario,
                         run_experiment, summarize, write_ledger)
from .modelio import load_model, save_model

__version__ = "0.1.0"
