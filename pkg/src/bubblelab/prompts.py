"""Prompt templates for LLM forecasters.

The instruction text mirrors the original forecasting-experiment wording,
with the horizon substituted and JSON response-format additions. The payoff
table shown to agents is the published rounded table; payoffs themselves are
always computed from the continuous earnings curve.
"""

from __future__ import annotations

from .market import MarketParams

# (forecast error, points) rows of the published payoff table, in prompt order.
# The error grid skips 2.50 and 2.55, as published. 1300 points = 1 guilder.
_TABLE_POINTS_A = [  # errors 0.10 .. 2.45 in steps of 0.05
    1300, 1299, 1299, 1298, 1298, 1297, 1296, 1295, 1293, 1292,
    1290, 1289, 1287, 1285, 1283, 1281, 1279, 1276, 1273, 1271,
    1268, 1265, 1262, 1259, 1255, 1252, 1248, 1244, 1240, 1236,
    1232, 1228, 1223, 1219, 1214, 1209, 1204, 1199, 1194, 1189,
    1183, 1177, 1172, 1166, 1160, 1153, 1147, 1141,
]
_TABLE_POINTS_B = [  # errors 2.60 .. 6.95 in steps of 0.05
    1121, 1114, 1107, 1099, 1092, 1085, 1077, 1069, 1061, 1053,
    1045, 1037, 1028, 1020, 1011, 1002, 993, 984, 975, 966,
    956, 947, 937, 927, 917, 907, 896, 886, 876, 865,
    854, 843, 832, 821, 809, 798, 786, 775, 763, 751,
    739, 726, 714, 701, 689, 676, 663, 650, 637, 623,
    610, 596, 583, 569, 555, 541, 526, 512, 497, 483,
    468, 453, 438, 423, 408, 392, 376, 361, 345, 329,
    313, 297, 280, 264, 247, 230, 213, 196, 179, 162,
    144, 127, 109, 91, 73, 55, 37, 19,
]


def payoff_table_rows() -> list[tuple[float, int]]:
    """All finite-error rows of the published payoff table."""
    errors_a = [round(0.10 + 0.05 * i, 2) for i in range(len(_TABLE_POINTS_A))]
    errors_b = [round(2.60 + 0.05 * i, 2) for i in range(len(_TABLE_POINTS_B))]
    return list(zip(errors_a, _TABLE_POINTS_A)) + list(zip(errors_b, _TABLE_POINTS_B))


def payoff_table_markdown() -> str:
    lines = ["| error | points |", "|-------|--------|"]
    for err, pts in payoff_table_rows():
        lines.append(f"| {err:g} | {pts} |")
    lines.append("| >= 7 | 0 |")
    return "\n".join(lines)


def _fmt(value: float) -> str:
    return str(round(value, 2))


def build_system_prompt(params: MarketParams, cap_known: bool) -> str:
    """The experiment instructions given as the system message.

    When the agent has already tripped the prediction cap, one extra note
    about the cap is appended (exactly once).
    """
    horizon = params.horizon
    rate_pct = f"{params.r * 100:g}"
    dividend = f"{params.mean_dividend:g}"
    lo, hi = params.guidance_range
    text = f"""General information: You are a financial advisor to a pension fund that wants to optimally invest a large amount of money. The pension fund has two investment options: a risk free investment and a risky investment. The risk free investment is putting all money on a bank account paying a fixed and known interest rate. The alternative risky investment is an investment in the stock market with uncertain return. In each time period the pension fund has to decide which fraction of its money to put on the bank account and which fraction of the money to spend on buying stocks. In order to make an optimal investment decision the pension fund needs an accurate prediction of the price of the stock. As their financial advisor, you have to predict the stock market price during {horizon} subsequent time periods. Your earnings during the experiment depend upon your forecasting accuracy. The smaller your forecasting errors in each period, the higher your total earnings.

Forecasting task of the financial advisor: The only task of the financial advisors in this experiment is to forecast the stock market index in each time period as accurate as possible. The stock price has to be predicted two time periods ahead. At the beginning of the experiment begins, you have to predict the stock price in the first two periods. It is very likely that the stock price will be between {lo:g} and {hi:g} in the first two periods. After all participants have given their predictions for the first two periods, the stock market price for the first period will be revealed and based upon your forecasting error your earnings for period 1 will be given. After that you have to give your prediction for the stock market index in the third period. After all participants have given their predictions for period 3, the stock market index in the second period will be revealed and, based upon your forecasting error your earnings for period 2 will be given. This process continues for {horizon} time periods.
The available information at period t for forecasting the stock price in period t consists of:
- all past prices up to period t-2, and
- past predictions up to period t-1, and
- total earnings up to period t-2

Information about the stock market: The stock market price is determined by equilibrium between demand and supply of stocks. The stock market price in period t will be that price for which aggregate demand equals supply. The supply of stocks is fixed during the experiment. The demand for stocks is determined by the aggregate demand of a number of large pension funds active. Each pension fund is advised by a participant of the experiment.

Information about the investment strategies of the pension funds: The precise investment strategy of the pension fund that you are advising and the investment strategies of the other pension funds are unknown. The bank account of the risk free investment pays a fixed interest rate of {rate_pct}% per time period. The holder of the stock receives a dividend payment in each time period. These dividend payments are uncertain however and vary over time. Economic experts of the pension funds have computed that the average dividend payments are {dividend} guilder per time period. The return of the stock market per time period is uncertain and depends upon (unknown) dividend payments as well as upon price changes of the stock. As the financial advisor of a pension fund you are not asked to forecast dividends, but you are only asked to forecast the price of the stock in each time period. Based upon your stock market price forecast, your pension fund will make an optimal investment decision. The higher your price forecast the larger will be the fraction of money invested by your pension fund in the stock market, so the larger will be their demand for stocks.

Earnings: earnings will depend upon forecasting accuracy only. The better you predict the stock market price in each period, the higher your aggregate earnings. Earnings will be according to the following earnings table.

{payoff_table_markdown()}

Response format:  Your response should be exclusively in JSON format with keys: 'reasoning' where you explain your rationale and method for prediction, and 'predictedValue', the numeric value of your predicted market price. Nothing outside the JSON format should be written. Only for the first time step should there be three keys: 'reasoning', 'predictedValue1', and 'predictedValue2'."""
    if cap_known:
        text += (
            f"\n\nNote: price predictions must be less than or equal to {params.cap:g} "
            f"and greater than or equal to 0."
        )
    return text


def build_initial_prompt(params: MarketParams) -> str:
    lo, hi = params.guidance_range
    return (
        "This is the first time step, give an initial price prediction for the first two periods.  "
        f"It is very likely that the stock price will be between {lo:g} and {hi:g} in the first two periods.\n\n"
        "Your response should be in the format:\n\n"
        '{"reasoning": "your reasoning here", "predictedValue1": xx.xx, "predictedValue2": xx.xx}'
    )


def history_table(prices: list[float], own_predictions: list[float]) -> str:
    """Markdown table of every period so far.

    One row per period 1..t; the current period's market price is still
    unknown and shown as N/A. The table is always complete regardless of the
    conversational memory setting.
    """
    lines = [
        "| Time Step | Market Price | Your Prediction |",
        "|-----------|--------------|-----------------|",
    ]
    for i, pred in enumerate(own_predictions, start=1):
        price = _fmt(prices[i - 1]) if i - 1 < len(prices) else "N/A"
        lines.append(f"| {i} | {price} | {_fmt(pred)} |")
    return "\n".join(lines)


_NEUTRAL_ASK = "Make your prediction for what the price will be in time period {period}. "
_NONLINEAR_ASK = (
    "Make your prediction for what the price will be in time period {period}. "
    "Take your time, think step by step, and try to extrapolate observed trends into the future.  "
    "Pay particular attention to modelling second and higher order trends in the price. "
    "This could include quadratic models, exponential models, looking at the change in price "
    "differences or modelling the price returns rather than the absolute price."
)


def build_step_prompt(
    t: int,
    prices: list[float],
    own_predictions: list[float],
    total_earnings: float,
    last_earnings: float,
    variant: str = "neutral",
) -> str:
    """User prompt for step t >= 2 (the first step uses the initial prompt)."""
    if t < 2:
        raise ValueError("step prompts start at t = 2; use build_initial_prompt for t = 1")
    if variant not in ("neutral", "nonlinear"):
        raise ValueError(f"unknown prompt variant {variant!r}")
    ask = (_NONLINEAR_ASK if variant == "nonlinear" else _NEUTRAL_ASK).format(period=t + 1)
    table = history_table(prices, own_predictions)
    return (
        f"Current time step: {t}; below is a markdown table showing historical market prices "
        f"and your predictions: \n\n{table}\n\n"
        f"Total earnings up to time {t - 1}: {_fmt(total_earnings)}. "
        f"Earnings at last time step: {_fmt(last_earnings)}.\n\n"
        f"{ask}\n\n"
        "Your response should be in the format:\n\n"
        '{"reasoning": "your reasoning here", "predictedValue": xx.xx}'
    )


def cap_message(params: MarketParams) -> str:
    cap = f"{params.cap:g}"
    return (
        f"Predictions above {cap} or below 0 are not accepted "
        f"please submit a prediction between 0 and {cap}."
    )
