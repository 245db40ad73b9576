"""Default country and industry registries for desk-scale runs.

The 21-country estimation sample and the importer groupings used by the
regression stage. Custom registries are always accepted; these are the
defaults the synthetic generator and the pipeline agree on.
"""

PAPER_COUNTRIES = [
    "BEL", "CAN", "CZE", "DEU", "ESP", "FRA", "GBR", "GRC", "HUN", "IRL", "ITA",
    "JPN", "MEX", "NLD", "POL", "PRT", "ROM", "RUS", "SVN", "TUR", "USA",
]

G5 = {"DEU", "FRA", "GBR", "JPN", "USA"}
NORTH_AMERICA = {"CAN", "MEX", "USA"}
EUROPE = {
    "BEL", "CZE", "DEU", "ESP", "FRA", "GBR", "GRC", "HUN", "IRL", "ITA",
    "NLD", "POL", "PRT", "ROM", "RUS", "SVN", "TUR",
}

ROW_CODE = "RoW"

MANUFACTURING_INDUSTRIES = [
    "chemicals", "electrical", "food", "leather", "machinery", "manufnec",
    "metals", "minerals", "paper", "petroleum", "rubber", "textiles",
    "transport", "wood",
]

IMPORTER_SET_NAMES = ["ALL", "EUR", "NA", "G5", "nonG5"]


def importer_sets(sample_countries) -> dict:
    """Membership sets for the importer splits, restricted to the sample."""
    sample = set(sample_countries)
    return {
        "ALL": sample,
        "EUR": sample & EUROPE,
        "NA": sample & NORTH_AMERICA,
        "G5": sample & G5,
        "nonG5": sample - G5,
    }
