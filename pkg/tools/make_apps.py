"""Regenerate src/guirl/data/apps.json (the synthetic app graph).

Widgets are laid out in one column; slot i sits at y = 260 + 210 i so boxes
never overlap and the left margin (x < 200) stays free.
"""

import json
from pathlib import Path

W, H = 1080, 2400

# (text, kind, target screen or None, page)
APPS = {
    "mail": ("Mail", "inbox", {
        "inbox": ("Inbox", [
            ("Compose", "nav", "compose", 0), ("Folders", "nav", "folders", 0),
            ("Settings", "nav", "settings", 0),
            ("Meeting notes", "list_item", "message", 0), ("Invoice March", "list_item", "message", 0),
            ("Team lunch", "list_item", "message", 0),
            ("Travel plans", "list_item", "message", 1), ("Newsletter", "list_item", "message", 1),
            ("Password reset", "list_item", "message", 1),
        ]),
        "compose": ("Compose", [
            ("To", "textfield", None, 0), ("Subject", "textfield", None, 0), ("Body", "textfield", None, 0),
            ("Send", "button", "sent", 0), ("Back", "nav", "inbox", 0),
        ]),
        "sent": ("Sent", [
            ("View sent", "button", None, 0), ("Undo send", "button", None, 0),
            ("Inbox", "nav", "inbox", 0), ("Back", "nav", "inbox", 0),
        ]),
        "folders": ("Folders", [
            ("Archive", "list_item", "archive", 0), ("Spam", "list_item", "archive", 0),
            ("Drafts", "list_item", "archive", 0), ("Back", "nav", "inbox", 0),
        ]),
        "archive": ("Archive", [
            ("Restore", "button", None, 0), ("Delete forever", "button", None, 0),
            ("Select all", "button", None, 0), ("Back", "nav", "folders", 0),
        ]),
        "settings": ("Mail settings", [
            ("Notifications", "button", None, 0), ("Signature", "textfield", None, 0),
            ("Dark mode", "button", None, 0), ("Save", "button", "inbox", 0), ("Back", "nav", "inbox", 0),
        ]),
        "message": ("Message", [
            ("Reply", "button", "compose", 0), ("Forward", "button", "compose", 0),
            ("Delete", "button", "inbox", 0), ("Star", "button", None, 0), ("Back", "nav", "inbox", 0),
        ]),
    }),
    "shop": ("Shop", "home", {
        "home": ("Shop home", [
            ("Search products", "textfield", None, 0), ("Search", "button", "results", 0),
            ("Cart", "nav", "cart", 0), ("Orders", "nav", "orders", 0),
            ("Deals", "nav", "deals", 0), ("Account", "nav", "account", 0),
        ]),
        "results": ("Results", [
            ("Coffee grinder", "list_item", "product", 0), ("Desk lamp", "list_item", "product", 0),
            ("Running shoes", "list_item", "product", 0), ("Water bottle", "list_item", "product", 0),
            ("Backpack", "list_item", "product", 1), ("Headphones", "list_item", "product", 1),
            ("Yoga mat", "list_item", "product", 1), ("Tea kettle", "list_item", "product", 1),
            ("Back", "nav", "home", 0),
        ]),
        "product": ("Product", [
            ("Add to cart", "button", None, 0), ("Buy now", "button", "checkout", 0),
            ("Wishlist", "button", None, 0), ("Cart", "nav", "cart", 0), ("Back", "nav", "results", 0),
        ]),
        "cart": ("Cart", [
            ("Checkout", "button", "checkout", 0), ("Remove item", "button", None, 0),
            ("Coupon code", "textfield", None, 0), ("Apply", "button", None, 0), ("Back", "nav", "home", 0),
        ]),
        "checkout": ("Checkout", [
            ("Address", "textfield", None, 0), ("Place order", "button", "orders", 0),
            ("Change payment", "button", None, 0), ("Back", "nav", "cart", 0),
        ]),
        "orders": ("Orders", [
            ("Order 1041", "list_item", None, 0), ("Order 1042", "list_item", None, 0),
            ("Order 1043", "list_item", None, 0), ("Track package", "button", None, 0),
            ("Back", "nav", "home", 0),
        ]),
        "deals": ("Deals", [
            ("Flash sale", "button", None, 0), ("Coupons", "button", None, 0),
            ("Clearance", "button", None, 0), ("Back", "nav", "home", 0),
        ]),
        "account": ("Account", [
            ("Nickname", "textfield", None, 0), ("Save profile", "button", None, 0),
            ("Log out", "button", None, 0), ("Back", "nav", "home", 0),
        ]),
    }),
    "maps": ("Maps", "home", {
        "home": ("Map", [
            ("Search places", "textfield", None, 0), ("Go", "button", "results", 0),
            ("Saved", "nav", "saved", 0), ("Map settings", "nav", "settings", 0),
            ("Recenter", "button", None, 0),
        ]),
        "results": ("Places", [
            ("Central Station", "list_item", "route", 0), ("City Museum", "list_item", "route", 0),
            ("Harbor Cafe", "list_item", "route", 0),
            ("Airport", "list_item", "route", 1), ("Stadium", "list_item", "route", 1),
            ("Old Town", "list_item", "route", 1), ("Back", "nav", "home", 0),
        ]),
        "route": ("Route", [
            ("Start", "button", None, 0), ("Drive", "button", None, 0), ("Walk", "button", None, 0),
            ("Transit", "button", None, 0), ("Back", "nav", "home", 0),
        ]),
        "saved": ("Saved places", [
            ("Home", "list_item", "route", 0), ("Work", "list_item", "route", 0),
            ("Add place", "button", None, 0), ("Back", "nav", "home", 0),
        ]),
        "settings": ("Map settings", [
            ("Units", "button", None, 0), ("Voice guidance", "button", None, 0),
            ("Avoid tolls", "button", None, 0), ("Home address", "textfield", None, 0),
            ("Save settings", "button", "home", 0), ("Back", "nav", "home", 0),
        ]),
    }),
}


def slug(text: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in text.lower()).strip("_")


def widget(screen_id: str, i: int, text: str, kind: str, target: str | None, page: int) -> dict:
    return {
        "id": f"{screen_id}/{slug(text)}",
        "kind": kind,
        "text": text,
        "bbox": [580.0, 260.0 + 210.0 * i, 760.0, 120.0],
        "target": target,
        "page": page,
    }


def build() -> dict:
    screens = []
    home_widgets = [
        widget("home", i, title, "nav", f"{app}/{root}", 0)
        for i, (app, (title, root, _)) in enumerate(APPS.items())
    ]
    home_widgets.append(widget("home", len(home_widgets), "Weather", "button", None, 0))
    screens.append({"id": "home", "app": None, "title": "Home", "pages": 1, "widgets": home_widgets})
    apps = []
    for app, (title, root, spec) in APPS.items():
        apps.append({"id": app, "title": title, "root": f"{app}/{root}"})
        for name, (stitle, ws) in spec.items():
            sid = f"{app}/{name}"
            widgets = [
                widget(sid, i, text, kind, f"{app}/{tgt}" if tgt else None, page)
                for i, (text, kind, tgt, page) in enumerate(ws)
            ]
            pages = 1 + max(w["page"] for w in widgets)
            screens.append({"id": sid, "app": app, "title": stitle, "pages": pages, "widgets": widgets})
    return {"screen": {"width": W, "height": H}, "home": "home", "apps": apps, "screens": screens}


if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src" / "guirl" / "data" / "apps.json"
    out.write_text(json.dumps(build(), indent=1) + "\n")
    print(f"wrote {out}")
