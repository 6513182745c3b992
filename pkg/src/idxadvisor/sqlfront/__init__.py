from .ast import (
    Aggregate,
    Between,
    ColumnRef,
    Comparison,
    ConstPred,
    InList,
    InSubquery,
    JoinPred,
    OrderItem,
    Query,
    QueryAst,
    all_tables,
    indexable_columns,
    jaccard,
    referenced_columns,
)
from .parser import (
    SqlError,
    SqlSyntaxError,
    UnknownIdentifierError,
    UnsupportedSqlError,
    parse,
    tokenize,
    unparse,
)
from .workload import (
    Workload,
    WorkloadError,
    expand_template,
    load_workload,
    make_query,
    save_workload,
    workload_from_records,
    workload_records,
)
